use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::Duration;

use homesec_core::notify::{find_key_message, list_spool};
use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_homesec");
const PASSWORD: &str = "correct horse battery";

const THREE_ROWS: &str = "ts_start_us,ts_end_us,src_ip,src_port,dst_ip,dst_port,proto,fwd_pkts,bwd_pkts,fwd_bytes,bwd_bytes,iat_mean_ms,iat_std_ms,syn,fin,rst,label,category
0,4000000,192.168.1.10,40000,52.1.1.1,443,TCP,10,8,2000,9000,235.3,120.1,2,2,0,Normal,Normal
1000000,1100000,192.168.1.11,53000,8.8.8.8,53,UDP,1,1,60,200,100,0,0,0,0,Normal,Normal
2000000,11990000,10.66.0.1,30000,192.168.50.10,80,TCP,6000,0,3000000,0,1.665,0.5,0,0,0,Attack,DoS
";

fn homesec(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn homesec")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(dir: &Path, listen: &str) -> PathBuf {
    let path = dir.join("homesec.toml");
    std::fs::write(
        &path,
        format!(
            "[gateway]\nlisten = \"{listen}\"\ndata_dir = \"data\"\n\n\
             [notify]\nspool_dir = \"gsm\"\nemail_dir = \"email\"\n\n\
             [auth]\nkdf_iterations = 1000\n"
        ),
    )
    .unwrap();
    path
}

fn add_user(config: &Path, name: &str) -> Output {
    let mut child = Command::new(BIN)
        .args(["user", "add", name, "--contact", "owner@example.net", "--config", p(config)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    writeln!(child.stdin.take().unwrap(), "{PASSWORD}").unwrap();
    child.wait_with_output().unwrap()
}

#[test]
fn attack_generation_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let o = homesec(&["attack", "--kind", "dos", "--seed", "1", "--out", p(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = std::fs::read(a).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, std::fs::read(b).unwrap());
}

#[test]
fn ddos_output_has_many_sources() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ddos.csv");
    let o = homesec(&["attack", "--kind", "ddos", "--seed", "1", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(out).unwrap();
    let srcs: BTreeSet<&str> = text
        .lines()
        .skip(1)
        .filter(|l| l.ends_with("Attack,DDoS"))
        .map(|l| l.split(',').nth(2).unwrap())
        .collect();
    assert!(srcs.len() >= 10, "{} sources", srcs.len());
}

#[test]
fn unknown_attack_kind_is_a_usage_error() {
    let o = homesec(&["attack", "--kind", "theft", "--seed", "1", "--out", "/dev/null"]);
    assert_eq!(o.status.code(), Some(2));
    let o = homesec(&["attack", "--kind", "credstuff", "--seed", "1", "--out", "http://127.0.0.1:1"]);
    assert_eq!(o.status.code(), Some(2), "credstuff without --password");
}

#[test]
fn replay_of_the_three_row_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("three.csv");
    std::fs::write(&csv, THREE_ROWS).unwrap();
    let o = homesec(&["replay", "--flows", p(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("category DoS\n  tp 1\n  fp 0\n  fn 0\n  tn 2\n  precision 1.0000\n  recall 1.0000\n"), "{text}");
    assert!(text.ends_with("overall\n  rows 3\n  accuracy 1.0000\n  fpr 0.0000\n"), "{text}");
}

#[test]
fn replay_of_an_empty_file_reports_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("empty.csv");
    std::fs::write(&csv, "").unwrap();
    let o = homesec(&["replay", "--flows", p(&csv)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).ends_with("overall\n  rows 0\n  accuracy 0.0000\n  fpr 0.0000\n"), "{}", stdout(&o));
}

#[test]
fn replay_with_a_bad_header_names_the_column() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, THREE_ROWS.replacen("dst_port", "dport", 1)).unwrap();
    let o = homesec(&["replay", "--flows", p(&csv)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("column dst_port"), "{}", stderr(&o));
}

#[test]
fn replay_of_a_missing_file_is_an_input_error() {
    let o = homesec(&["replay", "--flows", "/nonexistent/flows.csv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn benign_traffic_replays_without_false_positives() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("benign.csv");
    let o = homesec(&["gen-benign", "--flows", "1000", "--seed", "3", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = std::fs::read_to_string(&out).unwrap().lines().count() - 1;
    assert!(rows >= 1000, "{rows} rows");
    let o = homesec(&["replay", "--flows", p(&out)]);
    assert!(o.status.success());
    assert!(stdout(&o).ends_with("fpr 0.0000\n"), "{}", stdout(&o));
}

#[test]
fn detect_flags_a_generated_flood() {
    let dir = tempfile::tempdir().unwrap();
    let flows = dir.path().join("dos.csv");
    let packets = dir.path().join("dos-packets.csv");
    let o = homesec(&[
        "attack", "--kind", "dos", "--seed", "2", "--flows", "5", "--out", p(&flows), "--packets-out", p(&packets),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = homesec(&["detect", "--packets", p(&packets)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.lines().count() > 0);
    assert!(text.lines().all(|l| l.contains(" Attack DoS ")), "{text}");
    assert!(stderr(&o).contains("malformed 0"));
}

#[test]
fn gas_scenario_leaves_an_sms_in_the_spool() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "127.0.0.1:0");
    let script = dir.path().join("gas.csv");
    std::fs::write(&script, "at_ms,sensor_id,magnitude\n5000,gas1,3.0\n").unwrap();
    let o = homesec(&["scenario", "--script", p(&script), "--config", p(&config)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("5000 gas1 3 -> alert 1 Safety\n"), "{}", stdout(&o));
    let sms = list_spool(&dir.path().join("gsm"), "sms");
    assert_eq!(sms.len(), 1);
    let body = std::fs::read_to_string(&sms[0]).unwrap();
    assert!(body.contains("SEVERITY: SAFETY"), "{body}");
    assert_eq!(list_spool(&dir.path().join("gsm"), "call").len(), 1);
}

#[test]
fn adding_the_same_user_twice_fails() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "127.0.0.1:0");
    let first = add_user(&config, "owner");
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(dir.path().join("data/users.json").exists());
    let second = add_user(&config, "owner");
    assert_eq!(second.status.code(), Some(2));
    assert!(stderr(&second).contains("taken"), "{}", stderr(&second));
}

#[test]
fn malformed_config_exits_2_with_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[gateway]\nlisten = \"127.0.0.1:0\"\nfsync = maybe\n").unwrap();
    let o = homesec(&["run", "--config", p(&config), "--hardened"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn port_in_use_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let config = write_config(dir.path(), &taken.local_addr().unwrap().to_string());
    let o = homesec(&["run", "--config", p(&config), "--hardened"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("cannot bind"));
}

struct Server {
    child: Child,
    base: String,
}

impl Server {
    fn start(config: &Path, mode: &str) -> Self {
        let mut child = Command::new(BIN)
            .args(["run", "--config", p(config), mode])
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
        let addr = line
            .strip_prefix("listening on ")
            .and_then(|rest| rest.split_whitespace().next())
            .unwrap_or_else(|| panic!("unexpected banner {line:?}"));
        Self {
            base: format!("http://{addr}"),
            child,
        }
    }

    fn terminate(mut self) -> Output {
        let pid = self.child.id().to_string();
        Command::new("kill").args(["-TERM", &pid]).status().unwrap();
        let mut out = Vec::new();
        std::io::Read::read_to_end(self.child.stdout.as_mut().unwrap(), &mut out).unwrap();
        let status = self.child.wait().unwrap();
        Output {
            status,
            stdout: out,
            stderr: Vec::new(),
        }
    }
}

fn client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder().timeout(Duration::from_secs(10)).build().unwrap()
}

fn session(server: &Server, dir: &Path) -> String {
    let http = client();
    let res = http
        .post(format!("{}/auth/login", server.base))
        .json(&json!({"username": "owner", "password": PASSWORD}))
        .send()
        .unwrap();
    assert_eq!(res.status(), 200);
    let login_id = res.json::<Value>().unwrap()["login_id"].as_str().unwrap().to_string();
    let key = find_key_message(&dir.join("email"), &login_id).unwrap().key;
    let res = http
        .post(format!("{}/auth/verify", server.base))
        .json(&json!({"login_id": login_id, "key": key}))
        .send()
        .unwrap();
    assert_eq!(res.status(), 200);
    res.json::<Value>().unwrap()["token"].as_str().unwrap().to_string()
}

#[test]
fn valid_config_serves_status_until_terminated() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "127.0.0.1:0");
    assert!(add_user(&config, "owner").status.success());
    let server = Server::start(&config, "--sim");
    let http = client();

    let res = http.get(format!("{}/status", server.base)).send().unwrap();
    assert_eq!(res.status(), 401);

    let token = session(&server, dir.path());

    let res = http.get(format!("{}/status", server.base)).bearer_auth(&token).send().unwrap();
    assert_eq!(res.status(), 200);
    let status: Value = res.json().unwrap();
    assert_eq!(status["arm_state"], "Disarmed");
    assert!(status["sensors"].as_array().unwrap().len() >= 5);

    let script = dir.path().join("fire.csv");
    std::fs::write(&script, "at_ms,sensor_id,magnitude\n0,fire1,4.0\n").unwrap();
    let o = homesec(&["scenario", "--script", p(&script), "--target", &server.base, "--token", &token]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("fire1 4 -> alert 1"), "{}", stdout(&o));

    let out = server.terminate();
    assert!(out.status.success(), "{:?}", out.status);
    assert!(stdout(&out).contains("stopped"));
    assert!(dir.path().join("data").read_dir().unwrap().next().is_some());
}

#[test]
fn hardened_gateway_refuses_live_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "127.0.0.1:0");
    assert!(add_user(&config, "owner").status.success());
    let server = Server::start(&config, "--hardened");
    let token = session(&server, dir.path());
    let script = dir.path().join("gas.csv");
    std::fs::write(&script, "at_ms,sensor_id,magnitude\n0,gas1,3.0\n").unwrap();
    let o = homesec(&["scenario", "--script", p(&script), "--target", &server.base, "--token", "nope"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = homesec(&["scenario", "--script", p(&script), "--target", &server.base, "--token", &token]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("not running in simulation mode"));
    assert!(server.terminate().status.success());
}

#[test]
fn credstuff_against_nothing_is_unreachable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let o = homesec(&[
        "attack", "--kind", "credstuff", "--seed", "1", "--out", &format!("http://127.0.0.1:{port}"), "--password", "x",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}
