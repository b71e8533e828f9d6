//! Synthetic grid scenarios, reproducible from their spec and seed alone.

use crate::demand::{write_demand, Trip, VehicleType};
use crate::network::{write_network, EdgeRecord, NetworkError, NodeId, NodeRecord, RoadNetwork};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

pub const GRID_LINK_M: f64 = 100.0;
pub const GRID_SPEED_MPS: f64 = 13.9;
/// Most trips a single origin–destination pair may carry.
pub const MAX_TRIPS_PER_PAIR: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub trips: usize,
    pub seed: u64,
    /// Departures fall in `[0, window_s)`, on a 0.1 s grid.
    pub window_s: f64,
    pub signalized: bool,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, trips: usize, seed: u64) -> Self {
        Self { rows, cols, trips, seed, window_s: 3600.0, signalized: false }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("grid needs at least 2 rows and 2 columns, got {0}x{1}")]
    TooSmall(usize, usize),
    #[error("{trips} trips exceed {pairs} OD pairs x {cap} per pair")]
    TooManyTrips { trips: usize, pairs: usize, cap: usize },
    #[error("departure window must be positive, got {0}")]
    BadWindow(f64),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: GridSpec,
    pub net: RoadNetwork,
    /// Ordered by departure; ids follow that order.
    pub trips: Vec<Trip>,
}

/// `rows × cols` grid: node `r·cols + c` sits at `(100c, 100r)` and every
/// neighbour pair is joined by two opposing one-lane links.
pub fn grid_network(rows: usize, cols: usize, signalized: bool) -> Result<RoadNetwork, ScenarioError> {
    if rows < 2 || cols < 2 {
        return Err(ScenarioError::TooSmall(rows, cols));
    }
    let nodes = (0..rows * cols)
        .map(|i| NodeRecord {
            id: i as i64,
            x: (i % cols) as f64 * GRID_LINK_M,
            y: (i / cols) as f64 * GRID_LINK_M,
            signalized,
        })
        .collect();
    let mut edges = Vec::with_capacity(2 * (rows * (cols - 1) + cols * (rows - 1)));
    let mut link = |from: usize, to: usize| {
        edges.push(EdgeRecord {
            id: edges.len() as i64,
            from: from as i64,
            to: to as i64,
            length_m: GRID_LINK_M,
            lanes: 1,
            free_flow_mps: GRID_SPEED_MPS,
        })
    };
    for r in 0..rows {
        for c in 0..cols {
            let u = r * cols + c;
            if c + 1 < cols {
                link(u, u + 1);
                link(u + 1, u);
            }
            if r + 1 < rows {
                link(u, u + cols);
                link(u + cols, u);
            }
        }
    }
    Ok(RoadNetwork::from_records(nodes, edges)?)
}

/// Grid scenario with a one-hour departure window and no signals.
pub fn generate_grid_scenario(rows: usize, cols: usize, trips: usize, seed: u64) -> Result<Scenario, ScenarioError> {
    generate(&GridSpec::new(rows, cols, trips, seed))
}

pub fn generate(spec: &GridSpec) -> Result<Scenario, ScenarioError> {
    let net = grid_network(spec.rows, spec.cols, spec.signalized)?;
    if !(spec.window_s > 0.0 && spec.window_s.is_finite()) {
        return Err(ScenarioError::BadWindow(spec.window_s));
    }
    let n = net.node_count();
    // the grid is strongly connected, so every ordered pair is reachable
    let pairs = n * (n - 1);
    if spec.trips > pairs * MAX_TRIPS_PER_PAIR {
        return Err(ScenarioError::TooManyTrips { trips: spec.trips, pairs, cap: MAX_TRIPS_PER_PAIR });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut load: HashMap<(usize, usize), usize> = HashMap::new();
    let tenths = (spec.window_s * 10.0).round().max(1.0) as u64;
    let mut raw = Vec::with_capacity(spec.trips);
    while raw.len() < spec.trips {
        let o = rng.random_range(0..n);
        let mut d = rng.random_range(0..n - 1);
        if d >= o {
            d += 1;
        }
        let depart = rng.random_range(0..tenths);
        let slot = load.entry((o, d)).or_default();
        if *slot == MAX_TRIPS_PER_PAIR {
            continue;
        }
        *slot += 1;
        raw.push((depart, o, d));
    }
    raw.sort_unstable();
    let trips = raw
        .into_iter()
        .enumerate()
        .map(|(i, (t, o, d))| Trip {
            id: i as u64,
            origin: NodeId(o as u32),
            destination: NodeId(d as u32),
            depart_s: t as f64 / 10.0,
            vehicle_type: VehicleType::Car,
        })
        .collect();
    Ok(Scenario { spec: spec.clone(), net, trips })
}

impl Scenario {
    pub fn network_text(&self) -> String {
        write_network(&self.net)
    }

    pub fn demand_text(&self) -> String {
        write_demand(&self.trips, &self.net)
    }

    /// Same trips in a seeded random order.
    pub fn shuffled_trips(&self, seed: u64) -> Vec<Trip> {
        let mut t = self.trips.clone();
        t.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        t
    }

    /// Writes `network.csv` and `trips.csv` under `dir`.
    pub fn write_files(&self, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf), ScenarioError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let (net, dem) = (dir.join("network.csv"), dir.join("trips.csv"));
        std::fs::write(&net, self.network_text())?;
        std::fs::write(&dem, self.demand_text())?;
        Ok((net, dem))
    }
}
