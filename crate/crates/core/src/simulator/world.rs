use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, ManualClock, SystemClock};
use crate::codec::encrypt_path;
use crate::crypto::{AlgorithmSpec, SealMode, MIN_KDF_ITERATIONS};
use crate::engine::{CycleReport, Engine, EngineConfig, EngineError};
use crate::fsutil::join_rel;
use crate::identity::{IdentityError, SoftwareCa, TrustStore};
use crate::keydist::{Decision, Kdkp};
use crate::registry::PairId;

use super::cloud::{tree_contents, trees_identical, Mutation, SimCloud, SimConfig, SimError};

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("instance {0}: {1}")]
    Engine(usize, EngineError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("instance {0} has no pair yet")]
    NotPaired(usize),
    #[error("expectation failed: {0}")]
    Expectation(String),
}

#[derive(Debug, Clone)]
pub struct WorldOptions {
    /// RSA size for the test CA and the tokens.
    pub key_bits: usize,
    /// RSA size of every KDKP; must leave room for an OAEP-sealed key package.
    pub kdkp_bits: usize,
    pub kdf_iterations: u32,
    pub seed: u64,
    pub password: String,
    /// Algorithms of the key instance 0 generates.
    pub spec: AlgorithmSpec,
}

impl Default for WorldOptions {
    fn default() -> Self {
        Self {
            key_bits: 1024,
            kdkp_bits: crate::keydist::KDKP_BITS,
            kdf_iterations: MIN_KDF_ITERATIONS,
            seed: 7,
            password: "simulated".into(),
            spec: AlgorithmSpec::default(),
        }
    }
}

/// N engine instances, each with its own prot folder, paired with the
/// replicas of one simulated cloud folder. The engines see nothing but their
/// local folders.
pub struct SimWorld {
    pub cloud: SimCloud,
    engines: Vec<Engine>,
    prots: Vec<PathBuf>,
    pairs: Vec<Option<PairId>>,
    ca: SoftwareCa,
    clock: ManualClock,
    spec: AlgorithmSpec,
}

impl std::fmt::Debug for SimWorld {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimWorld").field("engines", &self.engines.len()).finish_non_exhaustive()
    }
}

pub fn user_name(i: usize) -> String {
    format!("user{i}")
}

impl SimWorld {
    /// Creates the cloud, a test CA and one initialized engine per replica.
    /// No pair exists yet; see [`SimWorld::pair_all`].
    pub fn new(root: &Path, config: SimConfig, options: &WorldOptions) -> Result<Self, WorldError> {
        let mut rng = StdRng::seed_from_u64(options.seed);
        let cloud = SimCloud::new(&root.join("cloud"), config)?;
        let ca = SoftwareCa::root("Simulated Root CA", options.key_bits, &mut rng)?;
        let trust = Arc::new(TrustStore::with_root(ca.certificate().clone()));
        let clock = ManualClock::new(SystemClock.now());
        let mut engines = Vec::new();
        let mut prots = Vec::new();
        for i in 0..cloud.replica_count() {
            let prot = root.join(format!("prot-{i}"));
            fs::create_dir_all(&prot)?;
            prots.push(fs::canonicalize(&prot)?);
            let token = Arc::new(ca.issue_token(&user_name(i), options.key_bits, &mut rng)?);
            let config = EngineConfig {
                registry_root: root.join(format!("registry-{i}")),
                user_id: user_name(i),
                kdf_iterations: options.kdf_iterations,
                seal_mode: SealMode::Cbc,
                kdkp: Some(Kdkp::generate_with_bits(options.kdkp_bits, &mut rng)),
                seed: Some(options.seed.wrapping_mul(31).wrapping_add(i as u64)),
            };
            let engine = Engine::init(config, &options.password, token, trust.clone(), Arc::new(clock.clone()))
                .map_err(|e| WorldError::Engine(i, e))?;
            engines.push(engine);
        }
        Ok(Self {
            pairs: vec![None; engines.len()],
            cloud,
            engines,
            prots,
            ca,
            clock,
            spec: options.spec,
        })
    }

    /// Pairs instance 0 with its empty replica, seeds one file, then lets
    /// every other instance obtain the key through the request/response
    /// files, with instance 0 approving.
    pub fn pair_all(&mut self) -> Result<(), WorldError> {
        self.add_pair(0)?;
        self.write(0, "seed.txt", b"seed")?;
        self.cycle(0)?;
        self.cloud.flush()?;
        for i in 1..self.engines.len() {
            self.add_pair(i)?;
        }
        self.cloud.flush()?;
        self.cycle(0)?;
        self.approve_all(0)?;
        self.cloud.flush()?;
        for i in 1..self.engines.len() {
            self.cycle(i)?;
        }
        self.cloud.flush()?;
        Ok(())
    }

    pub fn add_pair(&mut self, i: usize) -> Result<PairId, WorldError> {
        let shared = self.cloud.replica_root(i).to_path_buf();
        let id = self.engines[i]
            .add_pair(&self.prots[i], &shared, self.spec)
            .map_err(|e| WorldError::Engine(i, e))?;
        self.pairs[i] = Some(id);
        Ok(id)
    }

    /// Approves every inbound request shown to instance `i`.
    pub fn approve_all(&mut self, i: usize) -> Result<usize, WorldError> {
        let ids: Vec<String> = self.engines[i].inbound_requests().into_iter().map(|r| r.id).collect();
        for id in &ids {
            self.engines[i]
                .decide_request(id, Decision::Approve)
                .map_err(|e| WorldError::Engine(i, e))?;
        }
        Ok(ids.len())
    }

    pub fn len(&self) -> usize {
        self.engines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.engines.is_empty()
    }

    pub fn engine(&self, i: usize) -> &Engine {
        &self.engines[i]
    }

    pub fn engine_mut(&mut self, i: usize) -> &mut Engine {
        &mut self.engines[i]
    }

    pub fn pair_id(&self, i: usize) -> Result<PairId, WorldError> {
        self.pairs[i].ok_or(WorldError::NotPaired(i))
    }

    pub fn prot(&self, i: usize) -> &Path {
        &self.prots[i]
    }

    pub fn prots(&self) -> &[PathBuf] {
        &self.prots
    }

    pub fn ca(&self) -> &SoftwareCa {
        &self.ca
    }

    pub fn clock(&self) -> &ManualClock {
        &self.clock
    }

    /// Writes a prot file of instance `i` with a never-before-used mtime.
    pub fn write(&mut self, i: usize, rel: &str, content: &[u8]) -> io::Result<()> {
        let path = join_rel(&self.prots[i], rel);
        self.cloud.write_file(&path, content)
    }

    pub fn mkdir(&mut self, i: usize, rel: &str) -> io::Result<()> {
        fs::create_dir_all(join_rel(&self.prots[i], rel))
    }

    /// Removes a prot file or folder of instance `i`.
    pub fn remove(&mut self, i: usize, rel: &str) -> io::Result<()> {
        let path = join_rel(&self.prots[i], rel);
        if path.is_dir() {
            fs::remove_dir_all(path)
        } else {
            fs::remove_file(path)
        }
    }

    pub fn read(&self, i: usize, rel: &str) -> Option<Vec<u8>> {
        fs::read(join_rel(&self.prots[i], rel)).ok()
    }

    /// Shared-folder path of cleartext `rel` under instance `i`'s key.
    pub fn shared_rel(&self, i: usize, rel: &str) -> Result<String, WorldError> {
        let pair = self.engines[i]
            .registry()
            .pair(self.pair_id(i)?)
            .map_err(|e| WorldError::Engine(i, e.into()))?;
        let key = pair.key.as_ref().ok_or(WorldError::NotPaired(i))?;
        encrypt_path(key, rel).map_err(|e| WorldError::Expectation(e.to_string()))
    }

    pub fn cycle(&mut self, i: usize) -> Result<CycleReport, WorldError> {
        let id = self.pair_id(i)?;
        self.engines[i].run_cycle(id).map_err(|e| WorldError::Engine(i, e))
    }

    /// Every paired instance runs one cycle, in index order.
    pub fn cycle_all(&mut self) -> Result<Vec<CycleReport>, WorldError> {
        let paired: Vec<usize> = (0..self.engines.len()).filter(|i| self.pairs[*i].is_some()).collect();
        paired.into_iter().map(|i| self.cycle(i)).collect()
    }

    /// One propagation round: all instances cycle, then the cloud delivers
    /// everything in flight.
    pub fn round(&mut self) -> Result<Vec<CycleReport>, WorldError> {
        let reports = self.cycle_all()?;
        self.cloud.flush()?;
        Ok(reports)
    }

    pub fn converged(&self) -> Result<bool, WorldError> {
        Ok(self.cloud.converged(&self.prots)?)
    }

    pub fn prots_identical(&self) -> Result<bool, WorldError> {
        Ok(trees_identical(&self.prots)?)
    }

    /// Rounds until converged; returns how many were needed.
    pub fn run_until_converged(&mut self, max_rounds: usize) -> Result<Option<usize>, WorldError> {
        for n in 1..=max_rounds {
            self.round()?;
            if self.converged()? {
                return Ok(Some(n));
            }
        }
        Ok(None)
    }

    pub fn prot_contents(&self, i: usize) -> io::Result<std::collections::BTreeMap<String, Option<Vec<u8>>>> {
        tree_contents(&self.prots[i])
    }

    pub fn run_scenario(&mut self, scenario: &Scenario) -> Result<(), WorldError> {
        for (n, op) in scenario.ops.iter().enumerate() {
            self.run_op(op)
                .map_err(|e| WorldError::Expectation(format!("{} op {n}: {e}", scenario.name)))?;
        }
        Ok(())
    }

    fn run_op(&mut self, op: &ScenarioOp) -> Result<(), WorldError> {
        match op {
            ScenarioOp::PairAll => self.pair_all()?,
            ScenarioOp::Write { instance, path, text } => self.write(*instance, path, text.as_bytes())?,
            ScenarioOp::Mkdir { instance, path } => self.mkdir(*instance, path)?,
            ScenarioOp::Delete { instance, path } => self.remove(*instance, path)?,
            ScenarioOp::Tamper { replica, path, mutation } => {
                let rel = self.shared_rel(*replica, path)?;
                self.cloud.tamper(*replica, &rel, *mutation)?;
            }
            ScenarioOp::Step { count } => {
                for _ in 0..*count {
                    self.cloud.step()?;
                }
            }
            ScenarioOp::Flush => {
                self.cloud.flush()?;
            }
            ScenarioOp::Cycle { instance } => {
                self.cycle(*instance)?;
            }
            ScenarioOp::CycleAll => {
                self.cycle_all()?;
            }
            ScenarioOp::Round { count } => {
                for _ in 0..*count {
                    self.round()?;
                }
            }
            ScenarioOp::Advance { secs } => self.clock.advance(*secs),
            ScenarioOp::ApproveAll { instance } => {
                self.approve_all(*instance)?;
            }
            ScenarioOp::Restore { instance, path, version } => {
                let id = self.pair_id(*instance)?;
                self.engines[*instance]
                    .restore(id, path, *version)
                    .map_err(|e| WorldError::Engine(*instance, e))?;
            }
            ScenarioOp::ExpectFile { instance, path, text } => {
                let got = self.read(*instance, path);
                let want = text.as_ref().map(|t| t.as_bytes().to_vec());
                if got != want {
                    return Err(WorldError::Expectation(format!(
                        "instance {instance} {path}: expected {:?}, found {:?}",
                        text,
                        got.map(|b| String::from_utf8_lossy(&b).into_owned())
                    )));
                }
            }
            ScenarioOp::ExpectConverged => {
                if !self.converged()? {
                    return Err(WorldError::Expectation("instances have not converged".into()));
                }
            }
            ScenarioOp::ExpectQuarantined { instance, count } => {
                let id = self.pair_id(*instance)?;
                let n = self.engines[*instance]
                    .quarantined(id)
                    .map_err(|e| WorldError::Engine(*instance, e))?
                    .len();
                if n != *count {
                    return Err(WorldError::Expectation(format!(
                        "instance {instance}: {n} quarantined files, expected {count}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A scripted run, stored as JSON:
/// `{"name": "...", "ops": [{"op": "write", "instance": 0, "path": "a.txt", "text": "hi"}, ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub ops: Vec<ScenarioOp>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ScenarioOp {
    PairAll,
    Write { instance: usize, path: String, text: String },
    Mkdir { instance: usize, path: String },
    Delete { instance: usize, path: String },
    /// `path` is the cleartext name; the replica's copy of its blob is mutated.
    Tamper { replica: usize, path: String, mutation: Mutation },
    Step { count: u64 },
    Flush,
    Cycle { instance: usize },
    CycleAll,
    Round { count: usize },
    Advance { secs: i64 },
    ApproveAll { instance: usize },
    Restore { instance: usize, path: String, version: Option<u64> },
    /// `text: null` expects the file to be absent.
    ExpectFile { instance: usize, path: String, text: Option<String> },
    ExpectConverged,
    ExpectQuarantined { instance: usize, count: usize },
}

impl Scenario {
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }
}
