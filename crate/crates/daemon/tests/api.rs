mod support;

use std::fs;
use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use protbox::keydist::Decision;
use protbox::registry::PairState;
use protbox_daemon::dto::{AddPair, PolicyUpdate, RestoreRequest};
use protbox_daemon::{Control, DaemonConfig, DaemonError};
use support::*;
use tempfile::TempDir;

fn add(prot: &Path, shared: &Path) -> AddPair {
    fs::create_dir_all(prot).unwrap();
    fs::create_dir_all(shared).unwrap();
    AddPair {
        prot: prot.display().to_string(),
        shared: shared.display().to_string(),
        cipher: None,
        mac: None,
    }
}

fn remote_code(err: DaemonError) -> (u16, String) {
    match err {
        DaemonError::Remote(e) => (e.status, e.code),
        other => panic!("expected an API error, got {other:?}"),
    }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(files_under(&path));
        } else {
            out.push(path);
        }
    }
    out
}

fn protocol_files(shared: &Path) -> Vec<String> {
    fs::read_dir(shared)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with('_'))
        .collect()
}

#[test]
fn requests_without_the_token_are_refused() {
    let dir = TempDir::new().unwrap();
    let home = init_home(&dir.path().join("home"), "alice", None);
    let daemon = start(&home, PASSWORD).unwrap();
    assert!(daemon.client().pairs().unwrap().is_empty());

    let agent = agent();
    let resp = agent.get(daemon.url("/pairs")).call().unwrap();
    assert_eq!(resp.status().as_u16(), 401);
    let body: serde_json::Value = resp.into_body().read_json().unwrap();
    assert_eq!(body["error"], "Unauthorized");

    let resp = agent
        .get(daemon.url("/pairs"))
        .header("Authorization", "Bearer 00")
        .call()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 401);

    // the query token is only honoured by the event stream
    let resp = agent
        .get(format!("{}?access_token={}", daemon.url("/pairs"), daemon.token))
        .call()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 401);
    let resp = agent
        .get(format!("{}?access_token={}", daemon.url("/events"), daemon.token))
        .call()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 200);

    let resp = agent
        .get(daemon.url("/nope"))
        .header("Authorization", format!("Bearer {}", daemon.token))
        .call()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 404);
}

#[test]
fn runtime_file_tracks_the_daemon() {
    let dir = TempDir::new().unwrap();
    let home = init_home(&dir.path().join("home"), "alice", None);
    let daemon = start(&home, PASSWORD).unwrap();
    let info = protbox_daemon::home::RuntimeInfo::load(&home).expect("daemon.json written");
    assert_eq!(info.listen, daemon.addr);
    assert!(protbox_daemon::RemoteClient::discover(&home).is_some());
    daemon.stop().unwrap();
    assert!(protbox_daemon::home::RuntimeInfo::load(&home).is_none());
    assert!(protbox_daemon::RemoteClient::discover(&home).is_none());
}

#[test]
fn wrong_password_is_reported_and_nothing_listens() {
    let dir = TempDir::new().unwrap();
    let home = init_home(&dir.path().join("home"), "alice", None);
    let err = start(&home, "not the password").unwrap_err();
    assert_eq!(err.code(), "WrongPassword");
    assert_eq!(err.exit_code(), 3);
    assert!(protbox_daemon::home::RuntimeInfo::load(&home).is_none());
}

#[test]
fn busy_port_is_reported() {
    let dir = TempDir::new().unwrap();
    let home = init_home(&dir.path().join("home"), "alice", None);
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let mut config = DaemonConfig::load(&home).unwrap();
    config.listen = taken.local_addr().unwrap();
    config.save(&home).unwrap();
    let err = start(&home, PASSWORD).unwrap_err();
    assert_eq!(err.code(), "PortBusy");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn one_daemon_per_home() {
    let dir = TempDir::new().unwrap();
    let home = init_home(&dir.path().join("home"), "alice", None);
    let _first = start(&home, PASSWORD).unwrap();
    let err = start(&home, PASSWORD).unwrap_err();
    assert_eq!(err.code(), "Locked");
}

#[test]
fn key_request_is_approved_over_the_api() {
    let dir = TempDir::new().unwrap();
    let shared = dir.path().join("cloud/team");
    let alice_home = init_home(&dir.path().join("alice"), "alice", None);
    let bob_home = init_home(&dir.path().join("bob"), "bob", Some(alice_home.ca_dir()));
    let alice = start(&alice_home, PASSWORD).unwrap();
    let bob = start(&bob_home, PASSWORD).unwrap();
    let (a, b) = (alice.client(), bob.client());

    let prot_a = dir.path().join("alice-prot");
    let pa = a.add_pair(&add(&prot_a, &shared)).unwrap();
    assert_eq!(pa.state, PairState::Active);
    fs::write(prot_a.join("plan.txt"), b"ship it").unwrap();
    assert!(a.sync_now().unwrap().iter().all(|c| c.ok));
    assert!(!files_under(&shared).is_empty());

    let prot_b = dir.path().join("bob-prot");
    let pb = b.add_pair(&add(&prot_b, &shared)).unwrap();
    assert_eq!(pb.state, PairState::AwaitingKey);
    let outbound = b.outbound_requests().unwrap();
    assert_eq!(outbound.len(), 1);
    assert_eq!(Some(&outbound[0].id), pb.pending_request.as_ref());

    a.sync_now().unwrap();
    let inbound = a.inbound_requests().unwrap();
    assert_eq!(inbound.len(), 1);
    assert!(inbound[0].subject.contains("bob"), "{}", inbound[0].subject);
    assert_eq!(inbound[0].pair_id, pa.id);
    assert_eq!(inbound[0].fingerprint.len(), 64);

    let decision = a.decide_request(&inbound[0].id, Decision::Approve).unwrap();
    let response = decision.response_file.expect("approval writes a response");
    assert!(shared.join(&response).is_file());
    let (status, code) = remote_code(a.decide_request(&inbound[0].id, Decision::Approve).unwrap_err());
    assert_eq!((status, code.as_str()), (404, "UnknownRequest"));

    b.sync_now().unwrap();
    let pairs = b.pairs().unwrap();
    assert_eq!(pairs[0].state, PairState::Active);
    assert_eq!(fs::read(prot_b.join("plan.txt")).unwrap(), b"ship it");
    assert!(b.outbound_requests().unwrap().is_empty());

    fs::write(prot_b.join("reply.txt"), b"ack").unwrap();
    b.sync_now().unwrap();
    a.sync_now().unwrap();
    assert_eq!(fs::read(prot_a.join("reply.txt")).unwrap(), b"ack");
    let kinds: Vec<String> = b.events(0).unwrap().into_iter().map(|e| e.kind).collect();
    assert!(kinds.iter().any(|k| k == "KeyInstalled"), "{kinds:?}");
}

#[test]
fn denied_request_gets_no_response() {
    let dir = TempDir::new().unwrap();
    let shared = dir.path().join("cloud/team");
    let alice_home = init_home(&dir.path().join("alice"), "alice", None);
    let bob_home = init_home(&dir.path().join("bob"), "bob", Some(alice_home.ca_dir()));
    let alice = start(&alice_home, PASSWORD).unwrap();
    let bob = start(&bob_home, PASSWORD).unwrap();
    let (a, b) = (alice.client(), bob.client());

    let prot_a = dir.path().join("alice-prot");
    a.add_pair(&add(&prot_a, &shared)).unwrap();
    fs::write(prot_a.join("plan.txt"), b"ship it").unwrap();
    a.sync_now().unwrap();
    b.add_pair(&add(&dir.path().join("bob-prot"), &shared)).unwrap();
    a.sync_now().unwrap();
    let before = protocol_files(&shared);
    assert_eq!(before.len(), 1, "{before:?}");

    let inbound = a.inbound_requests().unwrap();
    let decision = a.decide_request(&inbound[0].id, Decision::Deny).unwrap();
    assert_eq!(decision.decision, "deny");
    assert!(decision.response_file.is_none());
    assert_eq!(protocol_files(&shared), before);
    assert!(a.inbound_requests().unwrap().is_empty());
    b.sync_now().unwrap();
    assert_eq!(b.pairs().unwrap()[0].state, PairState::AwaitingKey);
}

#[test]
fn deleted_file_is_hidden_and_restored() {
    let dir = TempDir::new().unwrap();
    let home = init_home(&dir.path().join("home"), "alice", None);
    let daemon = start(&home, PASSWORD).unwrap();
    let c = daemon.client();
    let prot = dir.path().join("prot");
    let shared = dir.path().join("shared");
    let pair = c.add_pair(&add(&prot, &shared)).unwrap();
    fs::create_dir_all(prot.join("docs")).unwrap();
    fs::write(prot.join("docs/notes.txt"), b"first").unwrap();
    c.sync_now().unwrap();

    for f in files_under(&shared) {
        if !f.file_name().unwrap().to_string_lossy().starts_with('_') {
            fs::remove_file(f).unwrap();
        }
    }
    c.sync_now().unwrap();
    assert!(!prot.join("docs/notes.txt").exists());
    let hidden = c.hidden(&pair.id).unwrap();
    let entry = hidden.iter().find(|h| h.path == "docs/notes.txt").expect("hidden entry");
    assert_eq!(entry.kind, "file");
    assert_eq!(entry.versions.len(), 1);
    assert!(entry.versions[0].captured_at.ends_with('Z'));

    let (status, code) = remote_code(
        c.restore(&pair.id, &RestoreRequest { path: "docs/notes.txt".into(), version: Some(99) })
            .unwrap_err(),
    );
    assert_eq!((status, code.as_str()), (404, "NoSuchVersion"));
    let restored = c
        .restore(&pair.id, &RestoreRequest { path: "docs/notes.txt".into(), version: None })
        .unwrap();
    assert!(restored.restored);
    assert_eq!(fs::read(prot.join("docs/notes.txt")).unwrap(), b"first");
    assert!(c.hidden(&pair.id).unwrap().iter().all(|h| h.path != "docs/notes.txt"));
}

#[test]
fn policy_and_errors_over_http() {
    let dir = TempDir::new().unwrap();
    let home = init_home(&dir.path().join("home"), "alice", None);
    let daemon = start(&home, PASSWORD).unwrap();
    let c = daemon.client();
    let pair = c.add_pair(&add(&dir.path().join("prot"), &dir.path().join("shared"))).unwrap();

    let view = c.policy(&pair.id).unwrap();
    assert_eq!(view.policy, "keep:10");
    let view = c
        .set_policy(&pair.id, &PolicyUpdate { path: None, policy: "ask".into() })
        .unwrap();
    assert_eq!(view.policy, "ask");
    let (status, code) = remote_code(
        c.set_policy(&pair.id, &PolicyUpdate { path: None, policy: "sometimes".into() })
            .unwrap_err(),
    );
    assert_eq!((status, code.as_str()), (400, "InvalidPolicy"));

    let (status, code) = remote_code(c.hidden("ffffffffffffffff").unwrap_err());
    assert_eq!(status, 404, "{code}");
    let (status, _) = remote_code(c.hidden("not-a-pair").unwrap_err());
    assert_eq!(status, 404);

    let resp = agent()
        .post(daemon.url("/pairs"))
        .header("Authorization", format!("Bearer {}", daemon.token))
        .header("Content-Type", "application/json")
        .send("{\"prot\": 3}")
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    let body: serde_json::Value = resp.into_body().read_json().unwrap();
    assert_eq!(body["error"], "BadRequest");

    c.remove_pair(&pair.id).unwrap();
    assert!(c.pairs().unwrap().is_empty());
    let (status, _) = remote_code(c.remove_pair(&pair.id).unwrap_err());
    assert_eq!(status, 404);
}

#[test]
fn event_stream_delivers_new_events() {
    let dir = TempDir::new().unwrap();
    let shared = dir.path().join("cloud/team");
    let alice_home = init_home(&dir.path().join("alice"), "alice", None);
    let bob_home = init_home(&dir.path().join("bob"), "bob", Some(alice_home.ca_dir()));
    let alice = start(&alice_home, PASSWORD).unwrap();
    let bob = start(&bob_home, PASSWORD).unwrap();
    let (a, b) = (alice.client(), bob.client());

    let resp = agent()
        .get(format!("{}?access_token={}", alice.url("/events"), alice.token))
        .header("Accept", "text/event-stream")
        .call()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 200);
    let content_type = resp.headers().get("content-type").unwrap().to_str().unwrap().to_owned();
    assert!(content_type.starts_with("text/event-stream"), "{content_type}");
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let reader = BufReader::new(resp.into_body().into_reader());
        for line in reader.lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });

    let prot_a = dir.path().join("alice-prot");
    a.add_pair(&add(&prot_a, &shared)).unwrap();
    fs::write(prot_a.join("x"), b"x").unwrap();
    a.sync_now().unwrap();
    b.add_pair(&add(&dir.path().join("bob-prot"), &shared)).unwrap();
    a.sync_now().unwrap();

    let deadline = Instant::now() + Duration::from_secs(10);
    let mut lines = Vec::new();
    while Instant::now() < deadline {
        match rx.recv_timeout(Duration::from_millis(200)) {
            Ok(line) => {
                let done = line == "event: KeyRequestInbound";
                lines.push(line);
                if done {
                    break;
                }
            }
            Err(_) => continue,
        }
    }
    assert!(lines.iter().any(|l| l == "event: KeyRequestInbound"), "{lines:?}");
    assert!(lines.iter().any(|l| l.starts_with("id: ")), "{lines:?}");

    let events = a.events(0).unwrap();
    let last = events.last().unwrap().seq;
    a.acknowledge_events(last).unwrap();
    assert!(a.events(0).unwrap().is_empty());
}

#[test]
fn every_pair_gets_a_cycling_worker() {
    let dir = TempDir::new().unwrap();
    let home = init_home(&dir.path().join("home"), "alice", None);
    let mut config = DaemonConfig::load(&home).unwrap();
    config.scan_period_secs = 1;
    config.save(&home).unwrap();
    let daemon = start(&home, PASSWORD).unwrap();
    let c = daemon.client();
    let mut shared_dirs = Vec::new();
    for n in 0..2 {
        let prot = dir.path().join(format!("prot{n}"));
        let shared = dir.path().join(format!("shared{n}"));
        c.add_pair(&add(&prot, &shared)).unwrap();
        fs::write(prot.join("auto.txt"), b"auto").unwrap();
        shared_dirs.push(shared);
    }
    let deadline = Instant::now() + Duration::from_secs(10);
    while shared_dirs.iter().any(|s| files_under(s).is_empty()) {
        assert!(Instant::now() < deadline, "a worker never uploaded");
        std::thread::sleep(Duration::from_millis(100));
    }
}
