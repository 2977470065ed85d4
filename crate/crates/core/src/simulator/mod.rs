//! Deterministic multi-replica cloud for tests.
//!
//! [`SimCloud`] owns one folder per replica and propagates changes between
//! them with seeded delays and losses, resolving concurrent writes to one
//! path last-writer-wins by logical time, then by replica index.
//! [`SimWorld`] puts a real [`crate::Engine`] on each replica.

mod cloud;
mod world;

pub use cloud::{
    tree_contents, trees_identical, Mutation, OpKind, SimCloud, SimConfig, SimError, TraceEntry, Version,
    FAKE_MTIME_START,
};
pub use world::{user_name, Scenario, ScenarioOp, SimWorld, WorldError, WorldOptions};
