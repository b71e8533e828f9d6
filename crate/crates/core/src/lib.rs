//! Lane-level microscopic traffic simulation with spatial sharding.

pub mod bench;
pub mod demand;
pub mod dynamics;
pub mod engine;
pub mod network;
pub mod partitioning;
pub mod scenario;
pub mod shard_runtime;
