//! Per-shard state and the cross-shard protocol run at every barrier.
//!
//! A ghost edge joins nodes on two shards. Its upstream shard (owner)
//! admits vehicles onto it; its downstream shard (mirror) resolves every
//! move on it and is therefore authoritative for vehicles travelling it.
//! The owner keeps a passive replica of each such vehicle, refreshed at
//! every barrier and dropped once the vehicle leaves the edge.

mod pool;
mod transfer;

pub use pool::VehiclePool;
pub use transfer::{BufferFull, TransferBuffer};

use crate::dynamics::{DynamicsError, Phase, VehicleState};
use crate::network::{EdgeId, LaneMap, NodeId, RoadNetwork, FREE_CELL};
use crate::partitioning::PartitionAssignment;
use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ShardError {
    #[error("shard {shard} already holds a live copy of trip {trip}")]
    DuplicateTrip { shard: usize, trip: u64 },
    #[error("ghost edge {edge} cell {cell}: occupied on both shard {owner} and shard {mirror}")]
    CellConflict { edge: EdgeId, cell: usize, owner: usize, mirror: usize },
    #[error("trip {trip} on shard {shard}: {msg}")]
    InconsistentGhost { trip: u64, shard: usize, msg: String },
    #[error(transparent)]
    BufferFull(#[from] BufferFull),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GhostEdge {
    pub edge: EdgeId,
    /// Shard of the upstream node.
    pub owner: usize,
    /// Shard of the downstream node.
    pub mirror: usize,
}

/// Cut edges of an assignment, each replicated whole on both sides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GhostZone {
    /// Sorted by edge id.
    pub edges: Vec<GhostEdge>,
    lookup: Vec<Option<u32>>,
}

impl GhostZone {
    #[inline]
    pub fn get(&self, edge: EdgeId) -> Option<&GhostEdge> {
        self.lookup.get(edge.idx()).copied().flatten().map(|i| &self.edges[i as usize])
    }

    #[inline]
    pub fn is_ghost(&self, edge: EdgeId) -> bool {
        self.get(edge).is_some()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Shortest ghost edge, if any.
    pub fn min_length(&self, net: &RoadNetwork) -> Option<f64> {
        self.edges.iter().map(|g| net.edge(g.edge).length_m).min_by(f64::total_cmp)
    }
}

/// Ghost set = edges whose endpoints lie on different shards.
pub fn identify_ghost_edges(assignment: &PartitionAssignment, net: &RoadNetwork) -> GhostZone {
    let mut edges = Vec::new();
    let mut lookup = vec![None; net.edge_count()];
    for e in &net.edges {
        let (owner, mirror) = (assignment.shard(e.from), assignment.shard(e.to));
        if owner != mirror {
            lookup[e.id.idx()] = Some(edges.len() as u32);
            edges.push(GhostEdge { edge: e.id, owner, mirror });
        }
    }
    GhostZone { edges, lookup }
}

/// What the barrier does with one pool entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferAction {
    /// Stays where it is.
    Local,
    /// Just entered a ghost edge from the owner side: a copy goes to the
    /// mirror, which continues it; the local entry becomes a replica.
    ReplicateTo(usize),
    /// A replica whose vehicle has left the ghost edge.
    HandoffDelete,
    /// Finished its trip; removed after its record is taken.
    Retire,
}

/// Decides the barrier action for `v` held by `shard`. Replicas must have
/// been refreshed from their authoritative copy first.
pub fn classify_vehicle_move(v: &VehicleState, ghost: &GhostZone, shard: usize) -> Result<TransferAction, ShardError> {
    let bad = |msg: String| ShardError::InconsistentGhost { trip: v.trip, shard, msg };
    match v.phase {
        Phase::Waiting => Ok(TransferAction::Local),
        Phase::Finished => Ok(TransferAction::Retire),
        Phase::MarkedForRemoval => Ok(TransferAction::HandoffDelete),
        Phase::OnRoad => match ghost.get(v.edge) {
            None => Ok(TransferAction::Local),
            Some(g) if g.mirror == shard => Ok(TransferAction::Local),
            Some(g) if g.owner == shard => Ok(TransferAction::ReplicateTo(g.mirror)),
            Some(_) => Err(bad(format!("live on {} which does not touch this shard", v.edge))),
        },
        Phase::InGhost => match ghost.get(v.edge) {
            Some(g) if g.owner == shard => Ok(TransferAction::Local),
            Some(g) if g.mirror == shard => Err(bad(format!("replica on {} held by its mirror", v.edge))),
            _ => Ok(TransferAction::HandoffDelete),
        },
    }
}

/// One shard: its nodes, the lane maps of every incident edge, its
/// vehicles and its outgoing transfer buffers.
#[derive(Debug)]
pub struct Shard {
    pub index: usize,
    pub nodes: Vec<NodeId>,
    /// Interior and ghost edges in id order.
    pub edges: Vec<EdgeId>,
    /// Snapshot at the current step.
    pub map: LaneMap,
    /// Claims for the next step.
    pub next: LaneMap,
    pub pool: VehiclePool,
    /// Outgoing copies tagged with their destination shard.
    pub copies: TransferBuffer<(usize, VehicleState)>,
    /// Pool positions to remove at the barrier.
    pub deletes: TransferBuffer<usize>,
}

impl Shard {
    pub fn new(index: usize, net: &RoadNetwork, assignment: &PartitionAssignment) -> Self {
        let nodes: Vec<NodeId> =
            net.nodes.iter().map(|n| n.id).filter(|&n| assignment.shard(n) == index).collect();
        let edges: Vec<EdgeId> = net
            .edges
            .iter()
            .filter(|e| assignment.shard(e.from) == index || assignment.shard(e.to) == index)
            .map(|e| e.id)
            .collect();
        let map = LaneMap::for_edges(net, edges.iter().copied());
        let next = map.clone();
        Self {
            index,
            nodes,
            edges,
            map,
            next,
            pool: VehiclePool::new(),
            copies: TransferBuffer::new(),
            deletes: TransferBuffer::new(),
        }
    }

    /// Sizes both buffers for one superstep over the current pool.
    pub fn reserve_buffers(&mut self) {
        let n = self.pool.len();
        self.copies.reserve(n);
        self.deletes.reserve(n);
    }

    /// Classifies every pool entry and appends the resulting copies and
    /// deletes. Entries that replicate turn into replicas in place.
    /// Returns the retired vehicles' positions.
    pub fn seal(&mut self, ghost: &GhostZone) -> Result<Vec<usize>, ShardError> {
        let mut retired = Vec::new();
        let index = self.index;
        for (pos, v) in self.pool.as_mut_slice().iter_mut().enumerate() {
            match classify_vehicle_move(v, ghost, index)? {
                TransferAction::Local => {}
                TransferAction::ReplicateTo(dest) => {
                    self.copies.push((dest, v.clone()))?;
                    v.phase = Phase::InGhost;
                }
                TransferAction::HandoffDelete => {
                    self.deletes.push(pos)?;
                }
                TransferAction::Retire => {
                    self.deletes.push(pos)?;
                    retired.push(pos);
                }
            }
        }
        Ok(retired)
    }
}

/// Applies sealed deletes and copies to one pool. Deletes go first in
/// descending position order; copies are then appended in the given order.
/// A copy replaces a replica of the same trip; a copy of a trip already
/// live here is a protocol violation.
pub fn apply_pool_transfers(
    pool: &mut VehiclePool,
    shard: usize,
    mut deletes: Vec<usize>,
    copies: Vec<VehicleState>,
) -> Result<(), ShardError> {
    pool.remove_positions(&mut deletes);
    for v in copies {
        match pool.position(v.trip) {
            Some(p) if pool.get(p).phase == Phase::InGhost => pool.replace(p, v),
            Some(_) => return Err(ShardError::DuplicateTrip { shard, trip: v.trip }),
            None => pool.push(v),
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransferStats {
    pub copies: usize,
    pub deletes: usize,
}

/// Barrier step one: drains every shard's sealed buffers and applies them
/// to the destination pools (copies ordered by source shard, then trip id).
pub fn apply_transfers(shards: &mut [Shard]) -> Result<TransferStats, ShardError> {
    let k = shards.len();
    let mut incoming: Vec<Vec<VehicleState>> = vec![Vec::new(); k];
    let mut stats = TransferStats::default();
    let mut per_shard_deletes = Vec::with_capacity(k);
    for s in shards.iter_mut() {
        let mut copies = s.copies.drain();
        copies.sort_by_key(|c| c.1.trip);
        stats.copies += copies.len();
        for (dest, v) in copies {
            incoming[dest].push(v);
        }
        let d = s.deletes.drain();
        stats.deletes += d.len();
        per_shard_deletes.push(d);
    }
    for ((s, deletes), copies) in shards.iter_mut().zip(per_shard_deletes).zip(incoming) {
        apply_pool_transfers(&mut s.pool, s.index, deletes, copies)?;
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SyncStats {
    pub ghost_edges: usize,
    pub handoffs: usize,
}

/// Barrier step two: merges each ghost edge's next-step bytes cell by cell
/// (occupied beats free) and writes the result to both shards, then
/// refreshes replicas from their authoritative copies and drops replicas
/// whose vehicle has left the edge.
pub fn sync_ghost_lanes(shards: &mut [Shard], ghost: &GhostZone) -> Result<SyncStats, ShardError> {
    for g in &ghost.edges {
        let a = shards[g.owner].next.edge_bytes(g.edge).expect("ghost edge on owner");
        let b = shards[g.mirror].next.edge_bytes(g.edge).expect("ghost edge on mirror");
        let mut merged = Vec::with_capacity(a.len());
        for (cell, (&x, &y)) in a.iter().zip(&b).enumerate() {
            merged.push(match (x, y) {
                (FREE_CELL, y) => y,
                (x, FREE_CELL) => x,
                _ => {
                    return Err(ShardError::CellConflict { edge: g.edge, cell, owner: g.owner, mirror: g.mirror })
                }
            });
        }
        shards[g.owner].next.write_edge_bytes(g.edge, &merged);
        shards[g.mirror].next.write_edge_bytes(g.edge, &merged);
    }

    // authoritative states of vehicles on ghost edges, keyed by trip
    let mut auth: HashMap<u64, VehicleState> = HashMap::new();
    for s in shards.iter() {
        for v in s.pool.iter() {
            if v.phase == Phase::OnRoad && ghost.get(v.edge).is_some_and(|g| g.mirror == s.index) {
                auth.insert(v.trip, v.clone());
            }
        }
    }
    let mut handoffs = 0;
    for s in shards.iter_mut() {
        let mut deletes = Vec::new();
        for (pos, v) in s.pool.as_mut_slice().iter_mut().enumerate() {
            if v.phase != Phase::InGhost {
                continue;
            }
            match auth.get(&v.trip) {
                Some(a) => {
                    *v = VehicleState { phase: Phase::InGhost, ..a.clone() };
                }
                None => v.phase = Phase::MarkedForRemoval,
            }
            if classify_vehicle_move(v, ghost, s.index)? == TransferAction::HandoffDelete {
                deletes.push(pos);
            }
        }
        handoffs += deletes.len();
        s.pool.remove_positions(&mut deletes);
    }
    Ok(SyncStats { ghost_edges: ghost.len(), handoffs })
}

/// CRC of each ghost edge's current bytes on (owner, mirror), for
/// divergence hunting.
pub fn ghost_checksums(shards: &[Shard], ghost: &GhostZone) -> Vec<(EdgeId, u32, u32)> {
    ghost
        .edges
        .iter()
        .map(|g| {
            let a = shards[g.owner].map.edge_bytes(g.edge).unwrap_or_default();
            let b = shards[g.mirror].map.edge_bytes(g.edge).unwrap_or_default();
            (g.edge, crc32fast::hash(&a), crc32fast::hash(&b))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::VehicleType;
    use crate::network::parse_network;

    /// P4: 0-1-2-3 with both directions.
    fn p4() -> RoadNetwork {
        let mut s = String::new();
        for i in 0..4 {
            s.push_str(&format!("node,{i},{},0,0\n", i * 50));
        }
        let mut id = 0;
        for i in 0..3 {
            s.push_str(&format!("edge,{id},{i},{},50,1,10\n", i + 1));
            id += 1;
            s.push_str(&format!("edge,{id},{},{i},50,1,10\n", i + 1));
            id += 1;
        }
        parse_network(&s).unwrap()
    }

    fn split(shards: &[u32]) -> PartitionAssignment {
        PartitionAssignment { shard_of: shards.to_vec(), k: 2 }
    }

    #[test]
    fn ghost_sets() {
        let net = p4();
        assert!(identify_ghost_edges(&PartitionAssignment::single(4), &net).is_empty());
        let g = identify_ghost_edges(&split(&[0, 0, 1, 1]), &net);
        let ids: Vec<_> = g.edges.iter().map(|e| (e.edge.0, e.owner, e.mirror)).collect();
        assert_eq!(ids, vec![(2, 0, 1), (3, 1, 0)]);
        let leaf = identify_ghost_edges(&split(&[0, 0, 0, 1]), &net);
        assert_eq!(leaf.edges.iter().map(|e| e.edge.0).collect::<Vec<_>>(), vec![4, 5]);
    }

    fn on(trip: u64, edge: u32, phase: Phase) -> VehicleState {
        let mut v = VehicleState::waiting(trip, trip as u32, 0.0, VehicleType::Car);
        v.phase = phase;
        v.edge = EdgeId(edge);
        v
    }

    #[test]
    fn classification() {
        let net = p4();
        let g = identify_ghost_edges(&split(&[0, 0, 1, 1]), &net);
        // interior
        assert_eq!(classify_vehicle_move(&on(1, 0, Phase::OnRoad), &g, 0).unwrap(), TransferAction::Local);
        // just entered the cut edge 1->2 on shard 0
        assert_eq!(classify_vehicle_move(&on(1, 2, Phase::OnRoad), &g, 0).unwrap(), TransferAction::ReplicateTo(1));
        // the continuing copy on shard 1
        assert_eq!(classify_vehicle_move(&on(1, 2, Phase::OnRoad), &g, 1).unwrap(), TransferAction::Local);
        // replica after its vehicle reached node 2 and moved on
        assert_eq!(classify_vehicle_move(&on(1, 4, Phase::InGhost), &g, 0).unwrap(), TransferAction::HandoffDelete);
        assert_eq!(classify_vehicle_move(&on(1, 2, Phase::InGhost), &g, 0).unwrap(), TransferAction::Local);
        assert!(classify_vehicle_move(&on(1, 2, Phase::InGhost), &g, 1).is_err());
        assert!(classify_vehicle_move(&on(1, 4, Phase::OnRoad), &g, 2).is_ok());
    }

    #[test]
    fn empty_buffers_leave_pools() {
        let net = p4();
        let a = split(&[0, 0, 1, 1]);
        let mut shards: Vec<Shard> = (0..2).map(|i| Shard::new(i, &net, &a)).collect();
        shards[0].pool.push(on(7, 0, Phase::OnRoad));
        let stats = apply_transfers(&mut shards).unwrap();
        assert_eq!(stats, TransferStats::default());
        assert_eq!(shards[0].pool.len(), 1);
        assert_eq!(shards[1].pool.len(), 0);
    }

    #[test]
    fn duplicate_live_trip_rejected() {
        let mut pool = VehiclePool::new();
        pool.push(on(3, 2, Phase::OnRoad));
        let err = apply_pool_transfers(&mut pool, 1, vec![], vec![on(3, 2, Phase::OnRoad)]);
        assert_eq!(err, Err(ShardError::DuplicateTrip { shard: 1, trip: 3 }));
        let mut pool = VehiclePool::new();
        pool.push(on(3, 2, Phase::InGhost));
        apply_pool_transfers(&mut pool, 1, vec![], vec![on(3, 4, Phase::OnRoad)]).unwrap();
        assert_eq!(pool.len(), 1);
        assert_eq!(pool.get(0).phase, Phase::OnRoad);
    }

    #[test]
    fn sync_merges_and_detects_conflicts() {
        let net = p4();
        let a = split(&[0, 0, 1, 1]);
        let mut shards: Vec<Shard> = (0..2).map(|i| Shard::new(i, &net, &a)).collect();
        let g = identify_ghost_edges(&a, &net);
        let e = EdgeId(2);
        // no vehicles: equal and free
        sync_ghost_lanes(&mut shards, &g).unwrap();
        assert_eq!(shards[0].next.edge_bytes(e), shards[1].next.edge_bytes(e));
        assert!(shards[0].next.edge_bytes(e).unwrap().iter().all(|&b| b == FREE_CELL));

        let i0 = shards[0].next.index(e, 0, 0).unwrap();
        let i1 = shards[1].next.index(e, 0, 10).unwrap();
        shards[0].next.set(i0, 0);
        shards[1].next.set(i1, 7);
        sync_ghost_lanes(&mut shards, &g).unwrap();
        let bytes = shards[0].next.edge_bytes(e).unwrap();
        assert_eq!(bytes, shards[1].next.edge_bytes(e).unwrap());
        assert_eq!(bytes[0], 0);
        assert_eq!(bytes[10], 7);

        for s in shards.iter_mut() {
            s.next.clear();
        }
        let j1 = shards[1].next.index(e, 0, 20).unwrap();
        let j0 = shards[0].next.index(e, 0, 20).unwrap();
        shards[0].next.set(j0, 3);
        shards[1].next.set(j1, 4);
        assert!(matches!(sync_ghost_lanes(&mut shards, &g), Err(ShardError::CellConflict { cell: 20, .. })));
    }

    #[test]
    fn replicas_refresh_then_hand_off() {
        let net = p4();
        let a = split(&[0, 0, 1, 1]);
        let g = identify_ghost_edges(&a, &net);
        let mut shards: Vec<Shard> = (0..2).map(|i| Shard::new(i, &net, &a)).collect();
        // vehicle entered 1->2 on shard 0 this step
        let mut v = on(9, 2, Phase::OnRoad);
        shards[0].pool.push(v.clone());
        shards[0].reserve_buffers();
        shards[0].seal(&g).unwrap();
        apply_transfers(&mut shards).unwrap();
        sync_ghost_lanes(&mut shards, &g).unwrap();
        assert_eq!(shards[0].pool.get(0).phase, Phase::InGhost);
        assert_eq!(shards[1].pool.get(0).phase, Phase::OnRoad);

        // mirror advances it along the edge: replica follows
        v.offset_m = 12.0;
        shards[1].pool.replace(0, v.clone());
        sync_ghost_lanes(&mut shards, &g).unwrap();
        assert_eq!(shards[0].pool.get(0).offset_m, 12.0);

        // mirror moves it past node 2: replica is dropped, one live copy remains
        v.edge = EdgeId(4);
        shards[1].pool.replace(0, v);
        let s = sync_ghost_lanes(&mut shards, &g).unwrap();
        assert_eq!(s.handoffs, 1);
        assert_eq!(shards[0].pool.len(), 0);
        assert_eq!(shards[1].pool.len(), 1);
    }
}
