//! Two-factor login: password first, then a one-time key delivered out of
//! band. Only a successful key check mints a session token.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use rand::rngs::StdRng;
use rand::{CryptoRng, Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::store::{EntryKind, EventStore, StoreError};

const SALT_LEN: usize = 16;
const HASH_LEN: usize = 32;
const TOKEN_BYTES: usize = 32;
const LOGIN_ID_BYTES: usize = 16;
const KEY_SPACE: u32 = 1_000_000;

#[derive(Debug, Error)]
pub enum AuthError {
    #[error("username already taken")]
    UsernameTaken,
    #[error("password must be at least {0} characters")]
    WeakPassword(usize),
    /// Unknown user and wrong password look the same from outside.
    #[error("authentication failed")]
    AuthFailed,
    #[error("account locked until {until}")]
    AccountLocked { until: u64 },
    #[error("key mismatch, {attempts_left} attempts left")]
    KeyMismatch { attempts_left: u32 },
    #[error("key attempts exhausted; log in again")]
    KeyExhausted,
    #[error("key expired; log in again")]
    KeyExpired,
    #[error("unknown login")]
    UnknownLogin,
    #[error("invalid token")]
    InvalidToken,
    #[error("key delivery failed: {0}")]
    Delivery(String),
    #[error("audit log: {0}")]
    Store(#[from] StoreError),
    #[error("user database: {0}")]
    UserDb(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuthConfig {
    pub kdf_iterations: u32,
    pub min_password_len: usize,
    pub key_ttl_ms: u64,
    pub key_attempts: u32,
    pub session_ttl_ms: u64,
    pub lockout_threshold: u32,
    pub lockout_ms: u64,
}

impl Default for AuthConfig {
    fn default() -> Self {
        Self {
            kdf_iterations: 100_000,
            min_password_len: 8,
            key_ttl_ms: 300_000,
            key_attempts: 3,
            session_ttl_ms: 3_600_000,
            lockout_threshold: 5,
            lockout_ms: 900_000,
        }
    }
}

/// Delivers a one-time key over a channel the attacker is assumed not to read.
pub trait KeyDelivery: Send + Sync {
    fn deliver_key(&self, contact: &str, login_id: &str, key: &str, now_ms: u64) -> Result<(), String>;
}

/// Captures key messages in memory. Test and embedding helper.
#[derive(Debug, Default)]
pub struct Outbox {
    messages: Mutex<Vec<OutboxMessage>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutboxMessage {
    pub contact: String,
    pub login_id: String,
    pub key: String,
}

impl Outbox {
    pub fn messages(&self) -> Vec<OutboxMessage> {
        self.messages.lock().expect("outbox lock poisoned").clone()
    }

    pub fn key_for(&self, login_id: &str) -> Option<String> {
        self.messages
            .lock()
            .expect("outbox lock poisoned")
            .iter()
            .rev()
            .find(|m| m.login_id == login_id)
            .map(|m| m.key.clone())
    }
}

impl KeyDelivery for Outbox {
    fn deliver_key(&self, contact: &str, login_id: &str, key: &str, _now_ms: u64) -> Result<(), String> {
        self.messages.lock().expect("outbox lock poisoned").push(OutboxMessage {
            contact: contact.into(),
            login_id: login_id.into(),
            key: key.into(),
        });
        Ok(())
    }
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub username: String,
    /// Hex PBKDF2-HMAC-SHA256 output.
    pub pass_hash: String,
    /// Hex, 16 random bytes.
    pub salt: String,
    pub contact: String,
    #[serde(default)]
    pub failed_logins: u32,
    #[serde(default)]
    pub locked_until: Option<u64>,
}

impl fmt::Debug for UserRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UserRecord")
            .field("username", &self.username)
            .field("contact", &self.contact)
            .field("failed_logins", &self.failed_logins)
            .field("locked_until", &self.locked_until)
            .finish_non_exhaustive()
    }
}

#[derive(Clone)]
pub struct OneTimeKey {
    value: String,
    pub issued_at: u64,
    pub ttl_ms: u64,
    pub attempts_left: u32,
}

impl OneTimeKey {
    fn matches(&self, guess: &str) -> bool {
        self.value.as_bytes().ct_eq(guess.as_bytes()).into()
    }
}

impl fmt::Debug for OneTimeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OneTimeKey")
            .field("value", &"******")
            .field("issued_at", &self.issued_at)
            .field("ttl_ms", &self.ttl_ms)
            .field("attempts_left", &self.attempts_left)
            .finish()
    }
}

#[derive(Debug, Clone)]
struct PendingLogin {
    username: String,
    key: OneTimeKey,
}

/// What the caller learns from a successful password check. The key itself
/// only ever travels through [`KeyDelivery`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LoginChallenge {
    pub login_id: String,
    pub username: String,
    pub expires_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionToken {
    pub value: String,
    pub username: String,
    pub issued_at: u64,
    pub ttl_ms: u64,
}

impl SessionToken {
    pub fn expires_at(&self) -> u64 {
        self.issued_at.saturating_add(self.ttl_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AuthAction {
    Register,
    PasswordOk,
    PasswordFail,
    KeyIssued,
    KeyOk,
    KeyFail,
    SessionIssued,
    Lockout,
    Logout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthAuditEntry {
    pub timestamp: u64,
    pub username: String,
    pub action: AuthAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub login_id: Option<String>,
    pub detail: String,
}

#[derive(Default)]
struct State {
    users: HashMap<String, UserRecord>,
    pending: HashMap<String, PendingLogin>,
    pending_by_user: HashMap<String, String>,
    sessions: HashMap<String, SessionToken>,
    audit: Vec<AuthAuditEntry>,
}

type SecureRng = Box<dyn RngCore + Send>;

pub struct AuthService {
    config: AuthConfig,
    state: RwLock<State>,
    rng: Mutex<SecureRng>,
    delivery: Arc<dyn KeyDelivery>,
    store: Option<Arc<EventStore>>,
    users_file: Option<PathBuf>,
    dummy_salt: [u8; SALT_LEN],
}

impl fmt::Debug for AuthService {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AuthService").field("config", &self.config).finish_non_exhaustive()
    }
}

impl AuthService {
    pub fn new(config: AuthConfig, delivery: Arc<dyn KeyDelivery>) -> Self {
        Self::with_rng(config, delivery, StdRng::from_entropy())
    }

    /// Uses `rng` for salts, keys, login ids and tokens. It must be a CSPRNG.
    pub fn with_rng<R: RngCore + CryptoRng + Send + 'static>(
        config: AuthConfig,
        delivery: Arc<dyn KeyDelivery>,
        mut rng: R,
    ) -> Self {
        let mut dummy_salt = [0u8; SALT_LEN];
        rng.fill_bytes(&mut dummy_salt);
        Self {
            config,
            state: RwLock::new(State::default()),
            rng: Mutex::new(Box::new(rng)),
            delivery,
            store: None,
            users_file: None,
            dummy_salt,
        }
    }

    /// Mirrors audit entries into the event log.
    pub fn with_store(mut self, store: Arc<EventStore>) -> Self {
        self.store = Some(store);
        self
    }

    /// Loads users from `path` (if it exists) and saves registrations back to
    /// it. Failure counters and lockouts are runtime-only.
    pub fn with_users_file(mut self, path: impl AsRef<Path>) -> Result<Self, AuthError> {
        let path = path.as_ref().to_path_buf();
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| AuthError::UserDb(e.to_string()))?;
            let users: Vec<UserRecord> =
                serde_json::from_str(&text).map_err(|e| AuthError::UserDb(e.to_string()))?;
            let mut state = self.state.write().expect("auth lock poisoned");
            for user in users {
                state.users.insert(user.username.clone(), user);
            }
        }
        self.users_file = Some(path);
        Ok(self)
    }

    pub fn config(&self) -> &AuthConfig {
        &self.config
    }

    pub fn register_user(&self, username: &str, password: &str, contact: &str, now: u64) -> Result<UserRecord, AuthError> {
        if password.chars().count() < self.config.min_password_len {
            return Err(AuthError::WeakPassword(self.config.min_password_len));
        }
        if self.read().users.contains_key(username) {
            return Err(AuthError::UsernameTaken);
        }
        let mut salt = [0u8; SALT_LEN];
        self.rng().fill_bytes(&mut salt);
        let hash = self.derive(password, &salt);
        let record = UserRecord {
            username: username.to_string(),
            pass_hash: hex::encode(hash),
            salt: hex::encode(salt),
            contact: contact.to_string(),
            failed_logins: 0,
            locked_until: None,
        };
        let mut state = self.write();
        if state.users.contains_key(username) {
            return Err(AuthError::UsernameTaken);
        }
        state.users.insert(username.to_string(), record.clone());
        if let Some(path) = &self.users_file {
            save_users(path, &state.users)?;
        }
        self.audit(&mut state, now, username, AuthAction::Register, None, "registered")?;
        Ok(record)
    }

    /// Checks the password and, on success, sends a fresh one-time key to
    /// the user's contact address. Any earlier pending login is invalidated.
    pub fn begin_login(&self, username: &str, password: &str, now: u64) -> Result<LoginChallenge, AuthError> {
        let stored = self.read().users.get(username).cloned();
        let Some(user) = stored else {
            // burn the same KDF time as a real check
            let _ = self.derive(password, &self.dummy_salt);
            let mut state = self.write();
            self.audit(&mut state, now, username, AuthAction::PasswordFail, None, "unknown user")?;
            return Err(AuthError::AuthFailed);
        };
        if let Some(until) = user.locked_until {
            if now < until {
                return Err(AuthError::AccountLocked { until });
            }
        }
        let salt = hex::decode(&user.salt).map_err(|e| AuthError::UserDb(e.to_string()))?;
        let expected = hex::decode(&user.pass_hash).map_err(|e| AuthError::UserDb(e.to_string()))?;
        let ok: bool = self.derive(password, &salt).as_slice().ct_eq(&expected).into();

        let mut state = self.write();
        let threshold = self.config.lockout_threshold;
        let lockout_ms = self.config.lockout_ms;
        let record = state.users.get_mut(username).ok_or(AuthError::AuthFailed)?;
        if record.locked_until.is_some_and(|until| now < until) {
            return Err(AuthError::AccountLocked {
                until: record.locked_until.unwrap_or(now),
            });
        }
        record.locked_until = None;
        if !ok {
            record.failed_logins += 1;
            let failures = record.failed_logins;
            let locked = failures >= threshold;
            if locked {
                record.failed_logins = 0;
                record.locked_until = Some(now + lockout_ms);
            }
            self.audit(&mut state, now, username, AuthAction::PasswordFail, None, &format!("consecutive failures: {failures}"))?;
            if locked {
                self.audit(&mut state, now, username, AuthAction::Lockout, None, &format!("locked until {}", now + lockout_ms))?;
            }
            return Err(AuthError::AuthFailed);
        }
        record.failed_logins = 0;
        let contact = record.contact.clone();

        let (login_id, key_value) = {
            let mut rng = self.rng();
            let mut id = [0u8; LOGIN_ID_BYTES];
            rng.fill_bytes(&mut id);
            (hex::encode(id), format!("{:06}", rng.gen_range(0..KEY_SPACE)))
        };
        self.delivery
            .deliver_key(&contact, &login_id, &key_value, now)
            .map_err(AuthError::Delivery)?;

        if let Some(old) = state.pending_by_user.remove(username) {
            state.pending.remove(&old);
        }
        state.pending.insert(
            login_id.clone(),
            PendingLogin {
                username: username.to_string(),
                key: OneTimeKey {
                    value: key_value,
                    issued_at: now,
                    ttl_ms: self.config.key_ttl_ms,
                    attempts_left: self.config.key_attempts,
                },
            },
        );
        state.pending_by_user.insert(username.to_string(), login_id.clone());
        self.audit(&mut state, now, username, AuthAction::PasswordOk, Some(&login_id), "password verified")?;
        self.audit(&mut state, now, username, AuthAction::KeyIssued, Some(&login_id), &format!("key sent to {contact}"))?;
        Ok(LoginChallenge {
            login_id,
            username: username.to_string(),
            expires_at: now + self.config.key_ttl_ms,
        })
    }

    pub fn verify_key(&self, login_id: &str, key_guess: &str, now: u64) -> Result<SessionToken, AuthError> {
        let mut state = self.write();
        let pending = state.pending.get_mut(login_id).ok_or(AuthError::UnknownLogin)?;
        let username = pending.username.clone();

        if now > pending.key.issued_at.saturating_add(pending.key.ttl_ms) {
            remove_pending(&mut state, login_id);
            self.audit(&mut state, now, &username, AuthAction::KeyFail, Some(login_id), "key expired")?;
            return Err(AuthError::KeyExpired);
        }
        if !pending.key.matches(key_guess) {
            pending.key.attempts_left = pending.key.attempts_left.saturating_sub(1);
            let attempts_left = pending.key.attempts_left;
            if attempts_left == 0 {
                remove_pending(&mut state, login_id);
            }
            self.audit(&mut state, now, &username, AuthAction::KeyFail, Some(login_id), &format!("attempts left: {attempts_left}"))?;
            return Err(if attempts_left == 0 {
                AuthError::KeyExhausted
            } else {
                AuthError::KeyMismatch { attempts_left }
            });
        }

        remove_pending(&mut state, login_id);
        let mut raw = [0u8; TOKEN_BYTES];
        self.rng().fill_bytes(&mut raw);
        let token = SessionToken {
            value: hex::encode(raw),
            username: username.clone(),
            issued_at: now,
            ttl_ms: self.config.session_ttl_ms,
        };
        state.sessions.insert(token.value.clone(), token.clone());
        self.audit(&mut state, now, &username, AuthAction::KeyOk, Some(login_id), "key verified")?;
        self.audit(&mut state, now, &username, AuthAction::SessionIssued, Some(login_id), "session issued")?;
        Ok(token)
    }

    /// Unknown, expired and revoked tokens are indistinguishable.
    pub fn validate_token(&self, value: &str, now: u64) -> Result<String, AuthError> {
        let state = self.read();
        match state.sessions.get(value) {
            Some(t) if now < t.expires_at() => Ok(t.username.clone()),
            _ => Err(AuthError::InvalidToken),
        }
    }

    /// Revokes the token if it exists. Returns whether anything was revoked.
    pub fn logout(&self, value: &str, now: u64) -> Result<bool, AuthError> {
        let mut state = self.write();
        match state.sessions.remove(value) {
            Some(t) => {
                self.audit(&mut state, now, &t.username, AuthAction::Logout, None, "session revoked")?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    pub fn user(&self, username: &str) -> Option<UserRecord> {
        self.read().users.get(username).cloned()
    }

    pub fn has_users(&self) -> bool {
        !self.read().users.is_empty()
    }

    pub fn audit_log(&self) -> Vec<AuthAuditEntry> {
        self.read().audit.clone()
    }

    /// Number of login ids for `username` that would still accept a key.
    pub fn usable_pending_logins(&self, username: &str, now: u64) -> usize {
        self.read()
            .pending
            .values()
            .filter(|p| {
                p.username == username
                    && p.key.attempts_left > 0
                    && now <= p.key.issued_at.saturating_add(p.key.ttl_ms)
            })
            .count()
    }

    pub fn pending_attempts_left(&self, login_id: &str) -> Option<u32> {
        self.read().pending.get(login_id).map(|p| p.key.attempts_left)
    }

    pub fn active_sessions(&self, now: u64) -> usize {
        self.read().sessions.values().filter(|t| now < t.expires_at()).count()
    }

    fn derive(&self, password: &str, salt: &[u8]) -> [u8; HASH_LEN] {
        let mut out = [0u8; HASH_LEN];
        pbkdf2::pbkdf2_hmac::<Sha256>(password.as_bytes(), salt, self.config.kdf_iterations.max(1), &mut out);
        out
    }

    fn audit(
        &self,
        state: &mut State,
        now: u64,
        username: &str,
        action: AuthAction,
        login_id: Option<&str>,
        detail: &str,
    ) -> Result<(), AuthError> {
        let entry = AuthAuditEntry {
            timestamp: now,
            username: username.to_string(),
            action,
            login_id: login_id.map(str::to_string),
            detail: detail.to_string(),
        };
        if let Some(store) = &self.store {
            store.append(EntryKind::AuthAudit, now, &entry)?;
        }
        state.audit.push(entry);
        Ok(())
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, State> {
        self.state.read().expect("auth lock poisoned")
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, State> {
        self.state.write().expect("auth lock poisoned")
    }

    fn rng(&self) -> std::sync::MutexGuard<'_, SecureRng> {
        self.rng.lock().expect("rng lock poisoned")
    }
}

fn remove_pending(state: &mut State, login_id: &str) {
    if let Some(p) = state.pending.remove(login_id) {
        if state.pending_by_user.get(&p.username).map(String::as_str) == Some(login_id) {
            state.pending_by_user.remove(&p.username);
        }
    }
}

fn save_users(path: &Path, users: &HashMap<String, UserRecord>) -> Result<(), AuthError> {
    let mut list: Vec<&UserRecord> = users.values().collect();
    list.sort_by(|a, b| a.username.cmp(&b.username));
    let text = serde_json::to_string_pretty(&list).map_err(|e| AuthError::UserDb(e.to_string()))?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| AuthError::UserDb(e.to_string()))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| AuthError::UserDb(e.to_string()))?;
    fs::rename(&tmp, path).map_err(|e| AuthError::UserDb(e.to_string()))
}

/// Checks that every issued session was preceded, under the same login id,
/// by both a password success and a key success. Returns the offending
/// entries.
pub fn sessions_lacking_both_factors(audit: &[AuthAuditEntry]) -> Vec<AuthAuditEntry> {
    audit
        .iter()
        .enumerate()
        .filter(|(_, e)| e.action == AuthAction::SessionIssued)
        .filter(|(i, e)| {
            let earlier = &audit[..*i];
            let has = |action| earlier.iter().any(|p| p.action == action && p.login_id == e.login_id);
            e.login_id.is_none() || !has(AuthAction::PasswordOk) || !has(AuthAction::KeyOk)
        })
        .map(|(_, e)| e.clone())
        .collect()
}
