//! Encrypted folder pairing engine.
//!
//! A *prot folder* holds cleartext originals. A *shared folder* is the local
//! replica of a cloud-synchronized folder and only ever receives protected
//! blobs with encrypted names, plus underscore-prefixed protocol files used to
//! hand the folder key to other participants. The engine never talks to a
//! cloud provider; it only reads and writes local folders.
//!
//! Module map:
//!
//! - [`codec`]: filename encryption and the filesystem-safe Base64 alphabet.
//! - [`crypto`]: folder keys, the protected blob layout and the sealed
//!   registry container.
//! - [`registry`]: the local, never-synchronized structural store.
//! - [`sync`]: change detection, planning and application for one pair.
//! - [`keydist`]: signed request/response files that distribute folder keys.
//! - [`identity`]: certificate chains, signing tokens and trust stores.
//! - [`engine`]: one user instance tying the above together.
//! - [`simulator`]: a deterministic multi-replica cloud for tests.

pub mod clock;
pub mod codec;
pub mod crypto;
pub mod engine;
pub mod events;
pub mod fsutil;
pub mod identity;
pub mod keydist;
pub mod registry;
pub mod simulator;
pub mod sync;
pub mod tlv;

pub use clock::{Clock, ManualClock, SystemClock};
pub use codec::EncodedName;
pub use crypto::{AlgorithmSpec, PairKey};
pub use engine::{Engine, EngineConfig, EngineError};
pub use registry::{BackupPolicy, PairId, Registry};
