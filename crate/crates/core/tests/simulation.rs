use protbox::registry::PairState;
use protbox::simulator::{Mutation, Scenario, SimConfig, SimWorld, WorldOptions};

fn world(n: usize, seed: u64) -> (tempfile::TempDir, SimWorld) {
    let dir = tempfile::tempdir().unwrap();
    let config = SimConfig { replicas: n, seed, ..SimConfig::default() };
    let w = SimWorld::new(dir.path(), config, &WorldOptions { seed, ..WorldOptions::default() }).unwrap();
    (dir, w)
}

#[test]
fn key_distribution_brings_every_instance_online() {
    let (_d, mut w) = world(3, 1);
    w.pair_all().unwrap();
    let key0 = w.engine(0).registry().pair(w.pair_id(0).unwrap()).unwrap().key.clone().unwrap();
    for i in 1..3 {
        let pair = w.engine(i).registry().pair(w.pair_id(i).unwrap()).unwrap().clone();
        assert_eq!(pair.state(), PairState::Active);
        assert_eq!(pair.key.unwrap(), key0);
        assert_eq!(w.read(i, "seed.txt").unwrap(), b"seed");
    }
    for i in 0..3 {
        let protocol_files = std::fs::read_dir(w.cloud.replica_root(i))
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with('_'))
            .count();
        assert_eq!(protocol_files, 0, "request and responses are cleaned up");
    }
    assert!(w.converged().unwrap());
}

#[test]
fn edits_propagate_and_converge() {
    let (_d, mut w) = world(3, 2);
    w.pair_all().unwrap();
    w.write(1, "docs/a.txt", b"from one").unwrap();
    w.write(2, "b.txt", b"from two").unwrap();
    w.mkdir(0, "empty/inner").unwrap();
    let rounds = w.run_until_converged(5).unwrap();
    assert!(rounds.is_some());
    for i in 0..3 {
        assert_eq!(w.read(i, "docs/a.txt").unwrap(), b"from one");
        assert!(w.prot(i).join("empty/inner").is_dir());
    }
}

#[test]
fn tampered_blob_is_quarantined_everywhere() {
    let (_d, mut w) = world(3, 3);
    w.pair_all().unwrap();
    w.write(0, "f.txt", b"original").unwrap();
    w.run_until_converged(4).unwrap().unwrap();
    let rel = w.shared_rel(0, "f.txt").unwrap();
    w.cloud.tamper(0, &rel, Mutation::FlipBit { offset: 40, bit: 3 }).unwrap();
    w.cloud.flush().unwrap();
    w.round().unwrap();
    for i in 0..3 {
        assert_eq!(w.read(i, "f.txt").unwrap(), b"original");
        assert_eq!(w.engine(i).quarantined(w.pair_id(i).unwrap()).unwrap().len(), 1);
    }
}

#[test]
fn scripted_scenarios_pass() {
    for entry in std::fs::read_dir(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/scenarios")).unwrap() {
        let path = entry.unwrap().path();
        let scenario = Scenario::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let (_d, mut w) = world(3, 4);
        w.run_scenario(&scenario).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}
