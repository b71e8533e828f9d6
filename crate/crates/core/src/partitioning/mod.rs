//! Route-weighted traffic graph and node-to-shard assignment.

mod exact;
mod kmeans;
mod leiden;
mod modularity;
mod multilevel;

pub use exact::solve_gp_exact;
pub use kmeans::{assign_outliers, kmeans_aggregate, kmeans_centroids, KMeansOptions};
pub use leiden::{leiden_communities, leiden_traced, LeidenPhase, LeidenTrace};
pub use modularity::{modularity, modularity_fast, modularity_forms, Community};
pub use multilevel::{balance_bounds, balanced_partition, BalancedPartition};

use crate::demand::{Route, Trip};
use crate::network::{NodeId, RoadNetwork};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum PartitionError {
    #[error("infeasible capacity: {k} shards x {capacity} nodes < {nodes} nodes")]
    InfeasibleCapacity { k: usize, capacity: usize, nodes: usize },
    #[error("exact solver supports at most {max} nodes, got {nodes}")]
    TooLarge { nodes: usize, max: usize },
    #[error("no partition of {nodes} nodes into {k} parts with sizes in [{lower}, {upper}] (epsilon {epsilon})")]
    InfeasibleBalance { nodes: usize, k: usize, epsilon: f64, lower: usize, upper: usize },
    #[error("modularity is undefined on a graph with zero total weight")]
    ZeroWeight,
    #[error("modularity forms disagree: {0} vs {1}")]
    ModularityMismatch(f64, f64),
    #[error("{communities} communities cannot fill {k} shards; lower the shard count")]
    TooFewCommunities { communities: usize, k: usize },
    #[error("no assigned node to attach outliers to")]
    NoAssignedNodes,
    #[error("shard count must be at least 1")]
    ZeroShards,
    #[error("bad cost model: {0}")]
    BadCostModel(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("node {0} has no shard")]
    Unassigned(i64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Symmetrized route-traversal graph over the network's nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficGraph {
    /// Neighbors sorted by id with the summed weight of both directions.
    /// Self loops are dropped.
    pub adj: Vec<Vec<(u32, f64)>>,
    /// Visit counts.
    pub node_weight: Vec<f64>,
    pub coords: Vec<(f64, f64)>,
    /// Directed traversal count per network edge.
    pub edge_traversals: Vec<f64>,
}

impl TrafficGraph {
    /// Graph from an explicit undirected edge list; parallel entries add up.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)], coords: Option<Vec<(f64, f64)>>) -> Self {
        let mut maps: Vec<HashMap<u32, f64>> = vec![HashMap::new(); n];
        for &(i, j, w) in edges {
            if i == j {
                continue;
            }
            *maps[i].entry(j as u32).or_default() += w;
            *maps[j].entry(i as u32).or_default() += w;
        }
        let adj = maps
            .into_iter()
            .map(|m| {
                let mut v: Vec<(u32, f64)> = m.into_iter().collect();
                v.sort_unstable_by_key(|p| p.0);
                v
            })
            .collect();
        Self {
            adj,
            node_weight: vec![0.0; n],
            coords: coords.unwrap_or_else(|| vec![(0.0, 0.0); n]),
            edge_traversals: Vec::new(),
        }
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adj[i]
            .binary_search_by_key(&(j as u32), |p| p.0)
            .map_or(0.0, |k| self.adj[i][k].1)
    }

    /// Weighted degree `k_i`.
    pub fn degree(&self, i: usize) -> f64 {
        self.adj[i].iter().map(|p| p.1).sum()
    }

    /// Half the sum of all degrees.
    pub fn total_weight(&self) -> f64 {
        (0..self.node_count()).map(|i| self.degree(i)).sum::<f64>() / 2.0
    }

    /// Undirected pairs `i < j`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adj.iter().enumerate().flat_map(|(i, row)| {
            row.iter().filter(move |p| (p.0 as usize) > i).map(move |&(j, w)| (i, j as usize, w))
        })
    }

    /// Subgraph induced by `keep`; returns it with the kept original ids.
    pub fn induced(&self, keep: impl Fn(usize) -> bool) -> (TrafficGraph, Vec<usize>) {
        let ids: Vec<usize> = (0..self.node_count()).filter(|&i| keep(i)).collect();
        let mut local = vec![u32::MAX; self.node_count()];
        for (k, &i) in ids.iter().enumerate() {
            local[i] = k as u32;
        }
        let adj = ids
            .iter()
            .map(|&i| {
                self.adj[i]
                    .iter()
                    .filter(|p| local[p.0 as usize] != u32::MAX)
                    .map(|p| (local[p.0 as usize], p.1))
                    .collect()
            })
            .collect();
        let g = TrafficGraph {
            adj,
            node_weight: ids.iter().map(|&i| self.node_weight[i]).collect(),
            coords: ids.iter().map(|&i| self.coords[i]).collect(),
            edge_traversals: Vec::new(),
        };
        (g, ids)
    }
}

/// Counts route traversals of trips departing in `[window.0, window.1)`;
/// every trip when `window` is `None`. Each network edge contributes a
/// (possibly zero) weight to the pair of its endpoints.
pub fn build_traffic_graph(
    net: &RoadNetwork,
    trips: &[Trip],
    routes: &[Route],
    window: Option<(f64, f64)>,
) -> TrafficGraph {
    let n = net.node_count();
    let depart: HashMap<u64, f64> = trips.iter().map(|t| (t.id, t.depart_s)).collect();
    let mut traversals = vec![0.0; net.edge_count()];
    let mut node_weight = vec![0.0; n];
    for r in routes {
        let Some(&t) = depart.get(&r.trip) else { continue };
        if let Some((lo, hi)) = window {
            if !(t >= lo && t < hi) {
                continue;
            }
        }
        if let Some(first) = r.edges.first() {
            node_weight[net.edge(*first).from.idx()] += 1.0;
        }
        for e in &r.edges {
            traversals[e.idx()] += 1.0;
            node_weight[net.edge(*e).to.idx()] += 1.0;
        }
    }
    let edges: Vec<(usize, usize, f64)> =
        net.edges.iter().map(|e| (e.from.idx(), e.to.idx(), traversals[e.id.idx()])).collect();
    let coords = net.nodes.iter().map(|v| (v.x, v.y)).collect();
    let mut g = TrafficGraph::from_edges(n, &edges, Some(coords));
    g.node_weight = node_weight;
    g.edge_traversals = traversals;
    g
}

/// Timing constants of the communication-minimizing program plus the
/// per-shard node capacity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionCostModel {
    /// Seconds per cross-shard vehicle event.
    pub tau_com: f64,
    /// Seconds per on-shard vehicle update. Carried for reporting only;
    /// the objective does not use it.
    pub tau_cal: f64,
    /// Maximum nodes per shard.
    pub capacity: usize,
}

impl PartitionCostModel {
    pub fn validate(&self) -> Result<(), PartitionError> {
        if !(self.tau_cal > 0.0 && self.tau_com >= self.tau_cal) {
            return Err(PartitionError::BadCostModel(format!(
                "need tau_com >= tau_cal > 0, got {} and {}",
                self.tau_com, self.tau_cal
            )));
        }
        Ok(())
    }
}

/// Total node-to-shard map.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct PartitionAssignment {
    pub shard_of: Vec<u32>,
    pub k: usize,
}

impl PartitionAssignment {
    pub fn single(n: usize) -> Self {
        Self { shard_of: vec![0; n], k: 1 }
    }

    #[inline]
    pub fn shard(&self, node: NodeId) -> usize {
        self.shard_of[node.idx()] as usize
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &x in &self.shard_of {
            s[x as usize] += 1;
        }
        s
    }

    /// Sum of pair weights whose endpoints lie on different shards.
    pub fn cut_weight(&self, g: &TrafficGraph) -> f64 {
        g.pairs().filter(|&(i, j, _)| self.shard_of[i] != self.shard_of[j]).map(|p| p.2).sum()
    }

    /// Largest cut pair weight times `tau_com`.
    pub fn max_cut_cost(&self, g: &TrafficGraph, tau_com: f64) -> f64 {
        g.pairs()
            .filter(|&(i, j, _)| self.shard_of[i] != self.shard_of[j])
            .map(|p| p.2 * tau_com)
            .fold(0.0, f64::max)
    }

    /// Every node assigned to a shard below `k`, and every shard nonempty
    /// when there are at least as many nodes as shards.
    pub fn is_valid(&self) -> bool {
        self.k >= 1
            && self.shard_of.iter().all(|&s| (s as usize) < self.k)
            && (self.shard_of.len() < self.k || self.sizes().iter().all(|&s| s > 0))
    }
}

/// Writes `node_label,shard` lines in node order.
pub fn write_partition(p: &PartitionAssignment, net: &RoadNetwork) -> String {
    let mut out = format!("# lanesim partition v1 k={}\n", p.k);
    for (node, &s) in net.nodes.iter().zip(&p.shard_of) {
        out.push_str(&format!("{},{}\n", node.label, s));
    }
    out
}

/// Parses a partition file. `k` comes from the header when present,
/// otherwise from the largest shard index.
pub fn parse_partition(text: &str, net: &RoadNetwork) -> Result<PartitionAssignment, PartitionError> {
    let mut shard_of = vec![u32::MAX; net.node_count()];
    let mut k_header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let err = |msg: String| PartitionError::Parse { line: i + 1, msg };
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(k) = comment.split_whitespace().find_map(|w| w.strip_prefix("k=")) {
                k_header = Some(k.parse::<usize>().map_err(|e| err(format!("bad k: {e}")))?);
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let (a, b) = line.split_once(',').ok_or_else(|| err("expected node,shard".into()))?;
        let label: i64 = a.trim().parse().map_err(|e| err(format!("bad node id: {e}")))?;
        let shard: u32 = b.trim().parse().map_err(|e| err(format!("bad shard: {e}")))?;
        let node = net.node_by_label(label).ok_or_else(|| err(format!("unknown node {label}")))?;
        shard_of[node.idx()] = shard;
    }
    if let Some(pos) = shard_of.iter().position(|&s| s == u32::MAX) {
        return Err(PartitionError::Unassigned(net.nodes[pos].label));
    }
    let k = k_header.unwrap_or_else(|| shard_of.iter().max().map_or(1, |&m| m as usize + 1));
    if k == 0 {
        return Err(PartitionError::ZeroShards);
    }
    if let Some(&bad) = shard_of.iter().find(|&&s| s as usize >= k) {
        return Err(PartitionError::Parse { line: 0, msg: format!("shard {bad} >= k = {k}") });
    }
    Ok(PartitionAssignment { shard_of, k })
}

pub fn load_partition(path: impl AsRef<Path>, net: &RoadNetwork) -> Result<PartitionAssignment, PartitionError> {
    parse_partition(&std::fs::read_to_string(path)?, net)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum PartitionMethod {
    Exact,
    Balanced,
    Unbalanced,
    /// Seeded uniform assignment, kept as a baseline.
    Random,
}

impl fmt::Display for PartitionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Exact => "exact",
            Self::Balanced => "balanced",
            Self::Unbalanced => "unbalanced",
            Self::Random => "random",
        })
    }
}

impl FromStr for PartitionMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact" => Ok(Self::Exact),
            "balanced" => Ok(Self::Balanced),
            "unbalanced" => Ok(Self::Unbalanced),
            "random" => Ok(Self::Random),
            _ => Err(format!("unknown partition method '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionOptions {
    pub epsilon: f64,
    pub seed: u64,
    pub cost: PartitionCostModel,
}

impl Default for PartitionOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            seed: 0,
            cost: PartitionCostModel { tau_com: 1.0, tau_cal: 1.0, capacity: usize::MAX },
        }
    }
}

/// Runs the chosen partitioner.
pub fn partition(
    g: &TrafficGraph,
    method: PartitionMethod,
    k: usize,
    opts: &PartitionOptions,
) -> Result<PartitionAssignment, PartitionError> {
    if k == 0 {
        return Err(PartitionError::ZeroShards);
    }
    match method {
        PartitionMethod::Exact => {
            let cost = PartitionCostModel { capacity: opts.cost.capacity.min(g.node_count()), ..opts.cost };
            solve_gp_exact(g, k, &cost).map(|r| r.0)
        }
        PartitionMethod::Balanced => balanced_partition(g, k, opts.epsilon).map(|b| b.assignment),
        PartitionMethod::Unbalanced => unbalanced_partition(g, k, opts.seed),
        PartitionMethod::Random => Ok(random_partition(g.node_count(), k, opts.seed)),
    }
}

/// Communities of visited nodes, grouped into `k` shards by centroid
/// k-means; unvisited nodes join the shard of their nearest visited node.
pub fn unbalanced_partition(g: &TrafficGraph, k: usize, seed: u64) -> Result<PartitionAssignment, PartitionError> {
    let (visited, ids) = g.induced(|i| g.node_weight[i] > 0.0);
    let mut label = vec![u32::MAX; g.node_count()];
    let groups: Vec<Vec<u32>> = leiden_communities(&visited)
        .into_iter()
        .enumerate()
        .map(|(c, members)| {
            let global: Vec<u32> = members.iter().map(|&m| ids[m as usize] as u32).collect();
            for &m in &global {
                label[m as usize] = c as u32;
            }
            global
        })
        .collect();
    let communities: Vec<Community> = groups.into_iter().map(|m| Community::of(g, m, &label)).collect();
    let partial = kmeans_aggregate(&communities, k, g.node_count(), &KMeansOptions { seed, ..Default::default() })?;
    assign_outliers(&partial, k, g)
}

/// Uniform random shard per node, with shard `i` forced onto node `i` of
/// a shuffled order so no shard is empty when `k <= n`.
pub fn random_partition(n: usize, k: usize, seed: u64) -> PartitionAssignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shard_of: Vec<u32> = (0..n).map(|_| rng.random_range(0..k as u32)).collect();
    if n >= k {
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for (s, &node) in order.iter().take(k).enumerate() {
            shard_of[node] = s as u32;
        }
    }
    PartitionAssignment { shard_of, k }
}
