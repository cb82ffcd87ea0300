use std::convert::Infallible;

use axum::extract::State;
use axum::response::sse::{Event, KeepAlive, Sse};
use futures_util::stream::{self, Stream, StreamExt};
use homesec_core::store::{EntryKind, LogEntry};
use tokio::sync::broadcast::error::RecvError;
use tokio::sync::{broadcast, watch};

use crate::wire::entry_json;
use crate::AppState;

/// Entries a client may fall behind by before it is dropped.
pub const STREAM_BUFFER: usize = 1_000;

pub fn is_streamed(kind: EntryKind) -> bool {
    matches!(kind, EntryKind::SensorEvent | EntryKind::Alert | EntryKind::Detection)
}

fn frame(entry: &LogEntry) -> Event {
    Event::default()
        .event(entry.kind.as_str())
        .id(entry.seq.to_string())
        .data(entry_json(entry).to_string())
}

async fn closing(rx: &mut watch::Receiver<bool>) {
    loop {
        if *rx.borrow_and_update() {
            return;
        }
        if rx.changed().await.is_err() {
            // Nobody can signal shutdown any more.
            std::future::pending::<()>().await;
        }
    }
}

pub async fn stream(State(st): State<AppState>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let state = (st.feed.subscribe(), st.closing.clone());
    let events = stream::unfold(state, |(mut rx, mut close): (broadcast::Receiver<LogEntry>, _)| async move {
        tokio::select! {
            biased;
            _ = closing(&mut close) => None,
            got = rx.recv() => match got {
                // Backlog counts the entry just received.
                Ok(_) if rx.len() >= STREAM_BUFFER => {
                    log::warn!("stream client more than {STREAM_BUFFER} entries behind, disconnecting");
                    None
                }
                Ok(entry) => Some((Ok(frame(&entry)), (rx, close))),
                Err(RecvError::Lagged(n)) => {
                    log::warn!("stream client fell {n} entries behind, disconnecting");
                    None
                }
                Err(RecvError::Closed) => None,
            },
        }
    });
    Sse::new(events.fuse()).keep_alive(KeepAlive::default())
}
