//! Bulk-synchronous driver: every superstep plans all vehicles against the
//! step-k snapshot, resolves cell claims, exchanges transfers between
//! shards, merges ghost lanes and swaps buffers.

mod checkpoint;
mod config;
mod output;

pub use checkpoint::{CheckpointError, CHECKPOINT_VERSION};
pub use config::CONFIG_KEYS;
pub use output::{parse_results, write_metrics, write_result_row, write_results, METRICS_HEADER, RESULTS_HEADER};

use crate::demand::{route_all, Route, Trip};
use crate::dynamics::{
    commit, step_vehicle, DynamicsConfig, DynamicsError, GapParams, IdmParams, LaneChangeParams, Move, Phase,
    StepPlan, VehicleState, WorldView,
};
use crate::network::{RoadNetwork, FREE_CELL};
use crate::partitioning::{
    build_traffic_graph, partition, PartitionAssignment, PartitionCostModel, PartitionError, PartitionMethod,
    PartitionOptions,
};
use crate::shard_runtime::{
    apply_transfers, identify_ghost_edges, sync_ghost_lanes, GhostZone, Shard, ShardError,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::time::Instant;

/// Env var that overrides the worker-thread count.
pub const WORKERS_ENV: &str = "LANESIM_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Contested claims resolved in trip-id order: identical output for
    /// any shard count or thread schedule.
    Strict,
    /// Contested claims race; first claimer wins.
    Fast,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "strict" => Ok(Self::Strict),
            "fast" => Ok(Self::Fast),
            _ => Err(format!("unknown mode '{s}' (strict|fast)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub start_s: f64,
    pub end_s: f64,
    pub shards: usize,
    pub method: PartitionMethod,
    /// Balance tolerance for the balanced partitioner.
    pub epsilon: f64,
    pub seed: u64,
    pub mode: Mode,
    pub car: IdmParams,
    pub truck: IdmParams,
    pub lane_change: LaneChangeParams,
    pub gap: GapParams,
    pub signal_cycle_s: f64,
    /// Departure window of the trips that weight the partition graph;
    /// every trip when unset.
    pub partition_window: Option<(f64, f64)>,
    /// Check occupancy and conservation after every superstep.
    pub check_invariants: bool,
    /// Worker threads; defaults to the shard count.
    pub workers: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        let d = DynamicsConfig::default();
        Self {
            dt: d.dt,
            start_s: 0.0,
            end_s: 3600.0,
            shards: 1,
            method: PartitionMethod::Balanced,
            epsilon: 0.05,
            seed: 0,
            mode: Mode::Strict,
            car: d.car,
            truck: d.truck,
            lane_change: d.lane_change,
            gap: d.gap,
            signal_cycle_s: d.signal_cycle_s,
            partition_window: None,
            check_invariants: false,
            workers: None,
        }
    }
}

impl SimConfig {
    pub fn dynamics(&self) -> DynamicsConfig {
        DynamicsConfig {
            dt: self.dt,
            car: self.car,
            truck: self.truck,
            lane_change: self.lane_change,
            gap: self.gap,
            signal_cycle_s: self.signal_cycle_s,
            seed: self.seed,
        }
    }

    /// Number of supersteps: `⌈(end − start)/dt⌉`.
    pub fn steps(&self) -> u64 {
        ((self.end_s - self.start_s) / self.dt - 1e-9).ceil().max(0.0) as u64
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        self.dynamics().validate().map_err(|e| EngineError::Config(e.to_string()))?;
        if !(self.end_s >= self.start_s) || !self.start_s.is_finite() || !self.end_s.is_finite() {
            return Err(EngineError::Config(format!("bad horizon [{}, {}]", self.start_s, self.end_s)));
        }
        if self.shards == 0 {
            return Err(EngineError::Config("shard count must be at least 1".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(EngineError::Config(format!("epsilon = {}", self.epsilon)));
        }
        if self.workers == Some(0) {
            return Err(EngineError::Config("worker count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error("invariant violated at step {step}: {msg}")]
    Invariant { step: u64, msg: String },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EngineError {
    /// Whether the error reports a broken protocol rather than bad input.
    pub fn is_invariant(&self) -> bool {
        matches!(self, Self::Invariant { .. })
    }
}

/// Result for one trip. Trips still waiting or en route at the horizon
/// have `arrive_s` unset and `complete == false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub trip: u64,
    pub depart_s: f64,
    pub enter_network_s: Option<f64>,
    pub arrive_s: Option<f64>,
    pub travel_time_s: Option<f64>,
    pub distance_m: f64,
    pub edge_entries: Vec<f64>,
    pub complete: bool,
}

impl TripRecord {
    pub fn from_state(v: &VehicleState) -> Self {
        let complete = v.phase == Phase::Finished;
        let arrive_s = if complete { v.arrive_s } else { None };
        Self {
            trip: v.trip,
            depart_s: v.depart_s,
            enter_network_s: v.enter_network_s,
            arrive_s,
            travel_time_s: arrive_s.zip(v.enter_network_s).map(|(a, e)| a - e),
            distance_m: v.distance_m,
            edge_entries: v.edge_entries.clone(),
            complete,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub time_s: f64,
    pub waiting: usize,
    pub live: usize,
    pub finished: usize,
    pub copies: usize,
    pub deletes: usize,
    pub handoffs: usize,
    pub compute_ns: u64,
    pub transfer_ns: u64,
    pub sync_ns: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub steps: u64,
    pub total_trips: usize,
    pub unreachable: usize,
    pub finished: usize,
    pub incomplete: usize,
    pub ghost_edges: usize,
    pub workers: usize,
    pub wall_ns: u64,
    pub compute_ns: u64,
    pub transfer_ns: u64,
    pub sync_ns: u64,
    pub copies: usize,
    pub per_step: Vec<StepMetrics>,
}

/// Trips waiting to be injected into one shard, in input order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Pending {
    trips: Vec<u32>,
    /// Input order is departure order: scan from a cursor.
    sorted: bool,
    cursor: usize,
}

impl Pending {
    fn remaining(&self) -> usize {
        self.trips.len() - self.cursor
    }
}

/// Whole-run state driven one superstep at a time.
pub struct Simulation<'a> {
    cfg: SimConfig,
    dynamics: DynamicsConfig,
    net: &'a RoadNetwork,
    trips: Vec<Trip>,
    routes: Vec<Route>,
    assignment: PartitionAssignment,
    ghost: GhostZone,
    shards: Vec<Shard>,
    pending: Vec<Pending>,
    step: u64,
    finished: usize,
    unreachable: usize,
    pool: rayon::ThreadPool,
    workers: usize,
    metrics: RunMetrics,
}

fn worker_count(cfg: &SimConfig) -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .or(cfg.workers)
        .unwrap_or(cfg.shards)
}

impl<'a> Simulation<'a> {
    /// `trips[i]` is routed by `routes[i]`. Unroutable trips must already
    /// be filtered out; `unreachable` only feeds the metrics.
    pub fn new(
        cfg: SimConfig,
        net: &'a RoadNetwork,
        trips: Vec<Trip>,
        routes: Vec<Route>,
        assignment: PartitionAssignment,
        unreachable: usize,
    ) -> Result<Self, EngineError> {
        cfg.validate()?;
        if trips.len() != routes.len() || trips.iter().zip(&routes).any(|(t, r)| t.id != r.trip || r.edges.is_empty()) {
            return Err(EngineError::Config("every trip needs its nonempty route at the same index".into()));
        }
        if assignment.shard_of.len() != net.node_count() || assignment.k != cfg.shards || !assignment.is_valid() {
            return Err(EngineError::Config(format!(
                "assignment covers {} nodes with k = {}, expected {} nodes and k = {}",
                assignment.shard_of.len(),
                assignment.k,
                net.node_count(),
                cfg.shards
            )));
        }
        let ghost = identify_ghost_edges(&assignment, net);
        let v_max = net.max_free_flow_speed();
        let limit = match cfg.mode {
            Mode::Strict => net.min_edge_length(),
            Mode::Fast => ghost.min_length(net),
        };
        if let Some(len) = limit {
            if v_max * cfg.dt > len + 1e-9 {
                return Err(EngineError::Config(format!(
                    "v_max * dt = {} m exceeds the shortest {} edge ({len} m)",
                    v_max * cfg.dt,
                    if cfg.mode == Mode::Strict { "" } else { "ghost" }
                )));
            }
        }
        let workers = worker_count(&cfg);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| EngineError::Config(format!("thread pool: {e}")))?;
        let shards: Vec<Shard> = (0..cfg.shards).map(|k| Shard::new(k, net, &assignment)).collect();
        let sorted = trips.windows(2).all(|w| w[0].depart_s <= w[1].depart_s);
        let mut pending = vec![Pending { sorted, ..Default::default() }; cfg.shards];
        for (i, t) in trips.iter().enumerate() {
            let origin = net.edge(routes[i].edges[0]).from;
            pending[assignment.shard(origin)].trips.push(i as u32);
            debug_assert_eq!(origin, t.origin);
        }
        let metrics = RunMetrics {
            total_trips: trips.len(),
            unreachable,
            ghost_edges: ghost.len(),
            workers,
            ..Default::default()
        };
        Ok(Self {
            dynamics: cfg.dynamics(),
            cfg,
            net,
            trips,
            routes,
            assignment,
            ghost,
            shards,
            pending,
            step: 0,
            finished: 0,
            unreachable,
            pool,
            workers,
            metrics,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn assignment(&self) -> &PartitionAssignment {
        &self.assignment
    }

    pub fn ghost_zone(&self) -> &GhostZone {
        &self.ghost
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn now(&self) -> f64 {
        self.cfg.start_s + self.step as f64 * self.cfg.dt
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.metrics
    }

    /// Per ghost edge: crc32 of the owner's and the mirror's bytes.
    pub fn ghost_checksums(&self) -> Vec<(crate::network::EdgeId, u32, u32)> {
        crate::shard_runtime::ghost_checksums(&self.shards, &self.ghost)
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.cfg.steps()
    }

    /// Trips not yet on the road, live authoritative vehicles, and finished trips.
    pub fn counts(&self) -> (usize, usize, usize) {
        let mut waiting: usize = self.pending.iter().map(Pending::remaining).sum();
        let mut live = 0;
        for s in &self.shards {
            for v in s.pool.iter() {
                match v.phase {
                    Phase::Waiting => waiting += 1,
                    Phase::OnRoad => live += 1,
                    _ => {}
                }
            }
        }
        (waiting, live, self.finished)
    }

    fn inject(&mut self, now: f64) {
        let trips = &self.trips;
        for (q, shard) in self.pending.iter_mut().zip(self.shards.iter_mut()) {
            let admit = |i: u32, pool: &mut crate::shard_runtime::VehiclePool| {
                let t = &trips[i as usize];
                pool.push(VehicleState::waiting(t.id, i, t.depart_s, t.vehicle_type));
            };
            if q.sorted {
                while q.cursor < q.trips.len() && trips[q.trips[q.cursor] as usize].depart_s <= now {
                    admit(q.trips[q.cursor], &mut shard.pool);
                    q.cursor += 1;
                }
            } else {
                let mut keep = Vec::with_capacity(q.trips.len());
                for &i in &q.trips[q.cursor..] {
                    if trips[i as usize].depart_s <= now {
                        admit(i, &mut shard.pool);
                    } else {
                        keep.push(i);
                    }
                }
                q.trips = keep;
                q.cursor = 0;
            }
        }
    }

    /// Runs one superstep and returns the trips that finished in it, by id.
    pub fn step(&mut self) -> Result<Vec<TripRecord>, EngineError> {
        let step = self.step;
        let now = self.now();
        let t_next = self.cfg.start_s + (step + 1) as f64 * self.cfg.dt;
        let invariant = |msg: String| EngineError::Invariant { step, msg };
        self.inject(now);

        let t0 = Instant::now();
        let (net, routes, dynamics, ghost, mode) = (self.net, &self.routes, &self.dynamics, &self.ghost, self.cfg.mode);
        let shards = &mut self.shards;
        let retired: Vec<Vec<TripRecord>> = self
            .pool
            .install(|| {
                shards
                    .par_iter_mut()
                    .map(|s| compute_shard(s, net, routes, dynamics, ghost, mode, now, t_next, step))
                    .collect::<Result<Vec<_>, ShardError>>()
            })
            .map_err(|e| invariant(e.to_string()))?;
        let compute_ns = t0.elapsed().as_nanos() as u64;

        let t1 = Instant::now();
        let tstats = apply_transfers(&mut self.shards).map_err(|e| invariant(e.to_string()))?;
        let transfer_ns = t1.elapsed().as_nanos() as u64;

        let t2 = Instant::now();
        let sstats = sync_ghost_lanes(&mut self.shards, &self.ghost).map_err(|e| invariant(e.to_string()))?;
        for s in &mut self.shards {
            std::mem::swap(&mut s.map, &mut s.next);
            s.next.clear();
        }
        let sync_ns = t2.elapsed().as_nanos() as u64;

        let mut records: Vec<TripRecord> = retired.into_iter().flatten().collect();
        records.sort_by_key(|r| r.trip);
        self.finished += records.len();
        self.step += 1;

        if self.cfg.check_invariants {
            self.check_invariants().map_err(invariant)?;
        }
        let (waiting, live, finished) = self.counts();
        let m = &mut self.metrics;
        m.steps = self.step;
        m.finished = finished;
        m.compute_ns += compute_ns;
        m.transfer_ns += transfer_ns;
        m.sync_ns += sync_ns;
        m.copies += tstats.copies;
        m.per_step.push(StepMetrics {
            step,
            time_s: now,
            waiting,
            live,
            finished,
            copies: tstats.copies,
            deletes: tstats.deletes,
            handoffs: sstats.handoffs,
            compute_ns,
            transfer_ns,
            sync_ns,
        });
        Ok(records)
    }

    /// Occupancy, replication and conservation checks on the current state.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut heads = HashSet::new();
        let mut trips = HashSet::new();
        let mut live = 0usize;
        let mut waiting: usize = self.pending.iter().map(Pending::remaining).sum();
        for s in &self.shards {
            let mut occupied = 0usize;
            for &e in &s.edges {
                let edge = self.net.edge(e);
                // each ghost edge counted once, on its downstream shard
                if self.assignment.shard(edge.to) != s.index {
                    continue;
                }
                let span = s.map.span(e).expect("local edge");
                occupied += (span.offset..span.offset + span.len()).filter(|&i| !s.map.is_free(i)).count();
            }
            let mut here = 0usize;
            for v in s.pool.iter() {
                match v.phase {
                    Phase::Waiting => waiting += 1,
                    Phase::OnRoad => {
                        here += 1;
                        if self.assignment.shard(self.net.edge(v.edge).to) != s.index {
                            return Err(format!("trip {} on {} is live on shard {}", v.trip, v.edge, s.index));
                        }
                        let idx = s.map.index(v.edge, v.lane, v.cell()).ok_or("head outside its edge")?;
                        if s.map.get(idx) == FREE_CELL {
                            return Err(format!("trip {} head cell {} is free", v.trip, idx));
                        }
                        if !heads.insert((v.edge, v.lane, v.cell())) {
                            return Err(format!("two heads on {} lane {} cell {}", v.edge, v.lane, v.cell()));
                        }
                    }
                    Phase::InGhost => continue,
                    Phase::Finished | Phase::MarkedForRemoval => {
                        return Err(format!("trip {} survived the barrier as {:?}", v.trip, v.phase))
                    }
                }
                if !trips.insert(v.trip) {
                    return Err(format!("trip {} is live on two shards", v.trip));
                }
            }
            if occupied != here {
                return Err(format!("shard {}: {occupied} occupied cells for {here} live vehicles", s.index));
            }
            live += here;
        }
        for g in &self.ghost.edges {
            if self.shards[g.owner].map.edge_bytes(g.edge) != self.shards[g.mirror].map.edge_bytes(g.edge) {
                return Err(format!("ghost edge {} differs between shards {} and {}", g.edge, g.owner, g.mirror));
            }
        }
        if waiting + live + self.finished != self.trips.len() {
            return Err(format!(
                "waiting {waiting} + live {live} + finished {} != {} trips",
                self.finished,
                self.trips.len()
            ));
        }
        Ok(())
    }

    /// Records of every trip not finished yet, by trip id.
    pub fn incomplete_records(&self) -> Vec<TripRecord> {
        let mut out: Vec<TripRecord> = Vec::new();
        for q in &self.pending {
            for &i in &q.trips[q.cursor..] {
                let t = &self.trips[i as usize];
                out.push(TripRecord::from_state(&VehicleState::waiting(t.id, i, t.depart_s, t.vehicle_type)));
            }
        }
        for s in &self.shards {
            for v in s.pool.iter() {
                if matches!(v.phase, Phase::Waiting | Phase::OnRoad) {
                    out.push(TripRecord::from_state(v));
                }
            }
        }
        out.sort_by_key(|r| r.trip);
        out
    }

    /// Steps to the horizon, handing finished records to `sink` after every
    /// barrier and the incomplete ones at the end. Once every trip has
    /// finished the remaining idle steps are skipped.
    pub fn run_with(&mut self, sink: impl FnMut(&TripRecord)) -> Result<RunMetrics, EngineError> {
        self.run_observed(sink, |_| Ok(()))
    }

    /// [`Self::run_with`] plus a callback after every barrier, e.g. for
    /// periodic checkpoints.
    pub fn run_observed(
        &mut self,
        mut sink: impl FnMut(&TripRecord),
        mut on_barrier: impl FnMut(&Self) -> Result<(), EngineError>,
    ) -> Result<RunMetrics, EngineError> {
        let start = Instant::now();
        while !self.is_done() && self.finished < self.trips.len() {
            for r in self.step()? {
                sink(&r);
            }
            on_barrier(self)?;
        }
        let incomplete = self.incomplete_records();
        for r in &incomplete {
            sink(r);
        }
        self.metrics.incomplete = incomplete.len();
        self.metrics.wall_ns += start.elapsed().as_nanos() as u64;
        Ok(self.metrics.clone())
    }

    /// Like [`Self::run_with`], collecting the records by trip id.
    pub fn run_to_end(&mut self) -> Result<(Vec<TripRecord>, RunMetrics), EngineError> {
        let mut records = Vec::new();
        let m = self.run_with(|r| records.push(r.clone()))?;
        records.sort_by_key(|r| r.trip);
        Ok((records, m))
    }
}

/// Plans, claims and applies every vehicle of one shard, then seals its
/// buffers. Returns the records of vehicles that finished.
#[allow(clippy::too_many_arguments)]
fn compute_shard(
    s: &mut Shard,
    net: &RoadNetwork,
    routes: &[Route],
    dynamics: &DynamicsConfig,
    ghost: &GhostZone,
    mode: Mode,
    now: f64,
    t_next: f64,
    step: u64,
) -> Result<Vec<TripRecord>, ShardError> {
    let view = WorldView { net, map: &s.map, routes, now, step };
    let plans: Vec<(usize, StepPlan)> = s
        .pool
        .as_slice()
        .par_iter()
        .enumerate()
        .filter(|(_, v)| matches!(v.phase, Phase::Waiting | Phase::OnRoad))
        .map(|(i, v)| step_vehicle(v, &view, dynamics).map(|p| (i, p)))
        .collect::<Result<_, DynamicsError>>()?;

    let next = &s.next;
    let (mut contested, free): (Vec<_>, Vec<_>) = plans.into_iter().partition(|(_, p)| p.contested);
    let mut moves: Vec<(usize, Move)> =
        free.par_iter().map(|(i, p)| commit(p, next).map(|m| (*i, m))).collect::<Result<_, _>>()?;
    match mode {
        Mode::Strict => {
            contested.sort_by_key(|(_, p)| p.trip);
            for (i, p) in &contested {
                moves.push((*i, commit(p, next)?));
            }
        }
        Mode::Fast => {
            let raced: Vec<(usize, Move)> =
                contested.par_iter().map(|(i, p)| commit(p, next).map(|m| (*i, m))).collect::<Result<_, _>>()?;
            moves.extend(raced);
        }
    }

    let mut by_pos: Vec<Option<Move>> = vec![None; s.pool.len()];
    for (i, m) in moves {
        by_pos[i] = Some(m);
    }
    s.pool
        .as_mut_slice()
        .par_iter_mut()
        .zip(by_pos.par_iter())
        .filter_map(|(v, m)| m.as_ref().map(|m| (v, m)))
        .try_for_each(|(v, m)| {
            let route = &routes[v.trip_index as usize];
            v.apply(m, route, net, t_next)
        })?;

    s.reserve_buffers();
    let retired = s.seal(ghost)?;
    Ok(retired.into_iter().map(|p| TripRecord::from_state(s.pool.get(p))).collect())
}

/// Routes, partitions and runs a whole scenario, returning every trip's
/// record (finished and incomplete) by trip id.
pub fn run(cfg: &SimConfig, net: &RoadNetwork, trips: &[Trip]) -> Result<(Vec<TripRecord>, RunMetrics), EngineError> {
    let (trips, routes, unreachable) = prepare(net, trips);
    let assignment = partition_for(cfg, net, &trips, &routes)?;
    let mut sim = Simulation::new(cfg.clone(), net, trips, routes, assignment, unreachable)?;
    sim.run_to_end()
}

/// Routes every trip and drops the unroutable ones. Returns the kept trips,
/// their routes and the number dropped.
pub fn prepare(net: &RoadNetwork, trips: &[Trip]) -> (Vec<Trip>, Vec<Route>, usize) {
    let rs = route_all(net, trips);
    let dropped: HashSet<u64> = rs.unreachable.iter().copied().collect();
    let kept: Vec<Trip> = trips.iter().filter(|t| !dropped.contains(&t.id)).cloned().collect();
    (kept, rs.routes, dropped.len())
}

/// Partition by the configured method over the route-weighted graph.
pub fn partition_for(
    cfg: &SimConfig,
    net: &RoadNetwork,
    trips: &[Trip],
    routes: &[Route],
) -> Result<PartitionAssignment, EngineError> {
    if cfg.shards == 1 {
        return Ok(PartitionAssignment::single(net.node_count()));
    }
    let g = build_traffic_graph(net, trips, routes, cfg.partition_window);
    let opts = PartitionOptions {
        epsilon: cfg.epsilon,
        seed: cfg.seed,
        cost: PartitionCostModel { tau_com: 1.0, tau_cal: 1.0, capacity: net.node_count() },
    };
    Ok(partition(&g, cfg.method, cfg.shards, &opts)?)
}
