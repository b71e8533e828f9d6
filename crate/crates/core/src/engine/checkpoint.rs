//! Barrier snapshots. Layout: `LSCK`, u32 version, u64 payload length,
//! u32 crc32 of the payload (all little endian), then the bincode payload.

use super::{EngineError, Pending, RunMetrics, SimConfig, Simulation};
use crate::demand::{Route, Trip};
use crate::dynamics::VehicleState;
use crate::network::RoadNetwork;
use crate::partitioning::PartitionAssignment;
use crate::shard_runtime::VehiclePool;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"LSCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("checkpoint version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated: {got} of {expected} bytes")]
    Truncated { got: usize, expected: usize },
    #[error("checkpoint corrupted: crc mismatch")]
    Corrupted,
    #[error("checkpoint belongs to a different network, demand or partition")]
    Mismatch,
    #[error("checkpoint encoding: {0}")]
    Encoding(String),
}

#[derive(Serialize, Deserialize)]
struct ShardState {
    pool: Vec<VehicleState>,
    map: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct Payload {
    cfg: SimConfig,
    step: u64,
    finished: usize,
    unreachable: usize,
    assignment: PartitionAssignment,
    shards: Vec<ShardState>,
    pending: Vec<Pending>,
    metrics: RunMetrics,
    fingerprint: u32,
}

/// crc32 over the network topology, the trips and their routes.
pub(super) fn fingerprint(net: &RoadNetwork, trips: &[Trip], routes: &[Route]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    let mut feed = |bytes: Vec<u8>| h.update(&bytes);
    let enc = |e: bincode::Error| unreachable!("in-memory encoding failed: {e}");
    feed(bincode::serialize(&net.nodes).unwrap_or_else(enc));
    feed(bincode::serialize(&net.edges).unwrap_or_else(enc));
    feed(bincode::serialize(trips).unwrap_or_else(enc));
    feed(bincode::serialize(routes).unwrap_or_else(enc));
    h.finalize()
}

pub(super) fn encode(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

pub(super) fn decode(bytes: &[u8]) -> Result<&[u8], CheckpointError> {
    if bytes.len() < HEADER_LEN {
        if !MAGIC.starts_with(&bytes[..bytes.len().min(4)]) {
            return Err(CheckpointError::BadMagic);
        }
        return Err(CheckpointError::Truncated { got: bytes.len(), expected: HEADER_LEN });
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let crc = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
    let body = &bytes[HEADER_LEN..];
    if body.len() < len {
        return Err(CheckpointError::Truncated { got: bytes.len(), expected: HEADER_LEN + len });
    }
    let body = &body[..len];
    if crc32fast::hash(body) != crc {
        return Err(CheckpointError::Corrupted);
    }
    Ok(body)
}

impl<'a> Simulation<'a> {
    /// Serialized barrier state.
    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let payload = Payload {
            cfg: self.cfg.clone(),
            step: self.step,
            finished: self.finished,
            unreachable: self.unreachable,
            assignment: self.assignment.clone(),
            shards: self
                .shards
                .iter()
                .map(|s| ShardState { pool: s.pool.as_slice().to_vec(), map: s.map.to_bytes() })
                .collect(),
            pending: self.pending.clone(),
            metrics: self.metrics.clone(),
            fingerprint: fingerprint(self.net, &self.trips, &self.routes),
        };
        encode(&bincode::serialize(&payload).expect("in-memory encoding"))
    }

    pub fn checkpoint(&self, path: impl AsRef<Path>) -> Result<(), EngineError> {
        let bytes = self.checkpoint_bytes();
        let tmp = path.as_ref().with_extension("tmp");
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    /// Rebuilds a simulation from checkpoint bytes. `trips` and `routes`
    /// must be the routed demand the checkpoint was taken from.
    pub fn restore_bytes(
        bytes: &[u8],
        net: &'a RoadNetwork,
        trips: Vec<Trip>,
        routes: Vec<Route>,
    ) -> Result<Self, EngineError> {
        let body = decode(bytes)?;
        let p: Payload = bincode::deserialize(body).map_err(|e| CheckpointError::Encoding(e.to_string()))?;
        if p.fingerprint != fingerprint(net, &trips, &routes) || p.shards.len() != p.cfg.shards {
            return Err(CheckpointError::Mismatch.into());
        }
        let mut sim = Simulation::new(p.cfg, net, trips, routes, p.assignment, p.unreachable)?;
        for (s, st) in sim.shards.iter_mut().zip(p.shards) {
            if !s.map.load_bytes(&st.map) {
                return Err(CheckpointError::Mismatch.into());
            }
            s.pool = VehiclePool::from_vec(st.pool);
        }
        sim.pending = p.pending;
        sim.step = p.step;
        sim.finished = p.finished;
        let workers = sim.metrics.workers;
        sim.metrics = RunMetrics { workers, ..p.metrics };
        Ok(sim)
    }

    pub fn restore(
        path: impl AsRef<Path>,
        net: &'a RoadNetwork,
        trips: Vec<Trip>,
        routes: Vec<Route>,
    ) -> Result<Self, EngineError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::restore_bytes(&bytes, net, trips, routes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let enc = encode(b"hello");
        assert_eq!(&enc[..4], b"LSCK");
        assert_eq!(decode(&enc).unwrap(), b"hello");
    }

    #[test]
    fn detects_damage() {
        let enc = encode(b"payload bytes");
        let mut bad = enc.clone();
        *bad.last_mut().unwrap() ^= 1;
        assert!(matches!(decode(&bad), Err(CheckpointError::Corrupted)));
        assert!(matches!(decode(&enc[..enc.len() - 3]), Err(CheckpointError::Truncated { .. })));
        assert!(matches!(decode(&enc[..7]), Err(CheckpointError::Truncated { .. })));
        let mut v = enc.clone();
        v[4] = 9;
        assert!(matches!(decode(&v), Err(CheckpointError::Version { found: 9, .. })));
        assert!(matches!(decode(b"nope, not a checkpoint"), Err(CheckpointError::BadMagic)));
    }
}
