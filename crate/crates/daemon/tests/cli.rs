mod support;

use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

use protbox_daemon::{DaemonConfig, Home};
use support::*;
use tempfile::TempDir;

fn protbox(home: &Path, password_file: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_protbox"))
        .arg("--home")
        .arg(home)
        .args(args)
        .env("PROTBOX_PASSWORD_FILE", password_file)
        .env_remove("PROTBOX_HOME")
        .output()
        .expect("run protbox")
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn password_file(dir: &Path, password: &str) -> std::path::PathBuf {
    let path = dir.join(format!("pw-{}", password.len()));
    fs::write(&path, format!("{password}\n")).unwrap();
    path
}

fn cli_init(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let home = dir.join("home");
    let pw = password_file(dir, PASSWORD);
    let out = protbox(
        &home,
        &pw,
        &["--json", "init", "--software-token", "carol", "--listen", "127.0.0.1:0", "--kdf-iterations", "10000"],
    );
    let report = json(&out);
    assert_eq!(report["user_id"], "carol");
    assert_eq!(report["fingerprint"].as_str().unwrap().len(), 64);
    (home, pw)
}

#[test]
fn local_commands_without_a_daemon() {
    let dir = TempDir::new().unwrap();
    let (home, pw) = cli_init(dir.path());
    assert_eq!(json(&protbox(&home, &pw, &["--json", "pair", "list"])), serde_json::json!([]));

    let prot = dir.path().join("prot");
    let shared = dir.path().join("shared");
    fs::create_dir_all(&prot).unwrap();
    fs::create_dir_all(&shared).unwrap();
    let added = json(&protbox(
        &home,
        &pw,
        &["--json", "pair", "add", "--prot", prot.to_str().unwrap(), "--shared", shared.to_str().unwrap()],
    ));
    assert_eq!(added["state"], "Active");
    let id = added["id"].as_str().unwrap().to_owned();

    fs::write(prot.join("a.txt"), b"a").unwrap();
    let cycles = json(&protbox(&home, &pw, &["--json", "sync"]));
    assert_eq!(cycles[0]["ok"], true);
    assert_eq!(cycles[0]["copied"], 1);

    let policy = json(&protbox(&home, &pw, &["--json", "policy", "set", &id, "a.txt", "never"]));
    assert_eq!(policy["overrides"]["a.txt"], "never");
    let policy = json(&protbox(&home, &pw, &["--json", "policy", "set", &id, "keep:2"]));
    assert_eq!(policy["policy"], "keep:2");

    let requests = json(&protbox(&home, &pw, &["--json", "requests", "list"]));
    assert_eq!(requests, serde_json::json!({ "inbound": [], "outbound": [] }));

    let text = protbox(&home, &pw, &["pair", "list"]);
    assert!(text.status.success());
    assert!(String::from_utf8_lossy(&text.stdout).contains(&id));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let (home, _) = cli_init(dir.path());
    let wrong = password_file(dir.path(), "wrong");

    let out = protbox(&home, &wrong, &["--json", "pair", "list"]);
    assert_eq!(out.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "WrongPassword");

    let out = protbox(&home, &wrong, &["pair", "frobnicate"]);
    assert_eq!(out.status.code(), Some(2));

    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let h = Home::new(&home);
    let mut config = DaemonConfig::load(&h).unwrap();
    config.listen = taken.local_addr().unwrap();
    config.save(&h).unwrap();
    let pw = password_file(dir.path(), PASSWORD);
    let out = protbox(&home, &pw, &["daemon", "run"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));

    let out = protbox(&dir.path().join("nowhere"), &pw, &["--json", "pair", "list"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "NotInitialized");

    let out = protbox(&home, &pw, &["--json", "init", "--software-token", "again"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "AlreadyInitialized");
}

#[test]
fn commands_go_to_a_running_daemon() {
    let dir = TempDir::new().unwrap();
    let home = init_home(&dir.path().join("home"), "dave", None);
    let daemon = start(&home, PASSWORD).unwrap();
    // the daemon holds the registry lock, so only the API can answer, and no
    // password is needed
    let no_password = dir.path().join("missing-password-file");
    let prot = dir.path().join("prot");
    let shared = dir.path().join("shared");
    fs::create_dir_all(&prot).unwrap();
    fs::create_dir_all(&shared).unwrap();
    let added = json(&protbox(
        home.root(),
        &no_password,
        &["--json", "pair", "add", "--prot", prot.to_str().unwrap(), "--shared", shared.to_str().unwrap()],
    ));
    let id = added["id"].as_str().unwrap();
    let pairs = daemon.client();
    assert_eq!(protbox_daemon::Control::pairs(&pairs).unwrap()[0].id, id);

    let out = protbox(home.root(), &no_password, &["--json", "hidden", "list", "0000000000000000"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "UnknownPair");

    let events = json(&protbox(home.root(), &no_password, &["--json", "events", "tail"]));
    assert!(events.is_array());
}
