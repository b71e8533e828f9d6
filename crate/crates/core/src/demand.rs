//! Origin–destination trips, static free-flow routing and departure ordering.

use crate::network::{EdgeId, NodeId, RoadNetwork};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum VehicleType {
    #[default]
    Car,
    Truck,
}

impl VehicleType {
    pub fn as_str(self) -> &'static str {
        match self {
            VehicleType::Car => "car",
            VehicleType::Truck => "truck",
        }
    }
}

impl std::str::FromStr for VehicleType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "" | "car" => Ok(VehicleType::Car),
            "truck" => Ok(VehicleType::Truck),
            other => Err(format!("unknown vehicle type {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub id: u64,
    pub origin: NodeId,
    pub destination: NodeId,
    pub depart_s: f64,
    pub vehicle_type: VehicleType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub trip: u64,
    pub edges: Vec<EdgeId>,
}

#[derive(Debug, thiserror::Error)]
pub enum DemandError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trip {trip}: unknown node {node}")]
    UnknownNode { trip: u64, node: i64 },
    #[error("trip {trip}: negative departure time {depart}")]
    NegativeDeparture { trip: u64, depart: f64 },
    #[error("trip {trip}: origin equals destination")]
    SameEndpoints { trip: u64 },
    #[error("duplicate trip id {0}")]
    DuplicateTrip(u64),
    #[error("route for trip {trip}: {msg}")]
    BadRoute { trip: u64, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parses `id,origin,destination,depart_s[,type]` records. Node fields use
/// the labels of the network file.
pub fn parse_demand(text: &str, net: &RoadNetwork) -> Result<Vec<Trip>, DemandError> {
    let mut trips = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = t.split(',').map(str::trim).collect();
        if !(4..=5).contains(&parts.len()) {
            return Err(DemandError::Parse {
                line,
                msg: format!("trip record needs 4 or 5 fields, found {}", parts.len()),
            });
        }
        let bad = |name: &str, raw: &str| DemandError::Parse {
            line,
            msg: format!("bad value {raw:?} for `{name}`"),
        };
        let id: u64 = parts[0].parse().map_err(|_| bad("id", parts[0]))?;
        let origin: i64 = parts[1].parse().map_err(|_| bad("origin", parts[1]))?;
        let destination: i64 = parts[2].parse().map_err(|_| bad("destination", parts[2]))?;
        let depart_s: f64 = parts[3].parse().map_err(|_| bad("depart_s", parts[3]))?;
        let vehicle_type = match parts.get(4) {
            Some(raw) => raw.parse().map_err(|msg| DemandError::Parse { line, msg })?,
            None => VehicleType::Car,
        };
        let origin = net
            .node_by_label(origin)
            .ok_or(DemandError::UnknownNode { trip: id, node: origin })?;
        let destination = net
            .node_by_label(destination)
            .ok_or(DemandError::UnknownNode { trip: id, node: destination })?;
        if !(depart_s >= 0.0) || !depart_s.is_finite() {
            return Err(DemandError::NegativeDeparture { trip: id, depart: depart_s });
        }
        if origin == destination {
            return Err(DemandError::SameEndpoints { trip: id });
        }
        if !seen.insert(id) {
            return Err(DemandError::DuplicateTrip(id));
        }
        trips.push(Trip { id, origin, destination, depart_s, vehicle_type });
    }
    Ok(trips)
}

pub fn load_demand(path: impl AsRef<Path>, net: &RoadNetwork) -> Result<Vec<Trip>, DemandError> {
    parse_demand(&std::fs::read_to_string(path)?, net)
}

pub fn write_demand(trips: &[Trip], net: &RoadNetwork) -> String {
    let mut out = String::from("# id,origin,destination,depart_s,type\n");
    for t in trips {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            t.id,
            net.node(t.origin).label,
            net.node(t.destination).label,
            t.depart_s,
            t.vehicle_type.as_str()
        );
    }
    out
}

/// Stable ascending order on departure time.
pub fn sort_by_departure(trips: &mut [Trip]) {
    trips.sort_by(|a, b| a.depart_s.total_cmp(&b.depart_s));
}

#[derive(Debug, Clone, Default)]
pub struct RouteSet {
    /// One route per reachable trip, in input order.
    pub routes: Vec<Route>,
    /// Trips whose destination cannot be reached; excluded from `routes`.
    pub unreachable: Vec<u64>,
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem {
    cost: f64,
    node: u32,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Free-flow travel time from every node to `target` (reverse Dijkstra).
pub fn costs_to(net: &RoadNetwork, target: NodeId) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; net.node_count()];
    let mut heap = BinaryHeap::new();
    dist[target.idx()] = 0.0;
    heap.push(HeapItem { cost: 0.0, node: target.0 });
    while let Some(HeapItem { cost, node }) = heap.pop() {
        if cost > dist[node as usize] {
            continue;
        }
        for &e in &net.incoming[node as usize] {
            let edge = net.edge(e);
            let next = cost + edge.free_flow_time();
            if next < dist[edge.from.idx()] {
                dist[edge.from.idx()] = next;
                heap.push(HeapItem { cost: next, node: edge.from.0 });
            }
        }
    }
    dist
}

#[inline]
fn same_cost(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(1.0)
}

/// Shortest free-flow path; among equal-cost paths the lexicographically
/// smallest edge-id sequence.
fn trace_route(net: &RoadNetwork, dist: &[f64], origin: NodeId, destination: NodeId) -> Option<Vec<EdgeId>> {
    if !dist[origin.idx()].is_finite() {
        return None;
    }
    let mut path = Vec::new();
    let mut at = origin;
    while at != destination {
        let here = dist[at.idx()];
        let next = net.adjacency[at.idx()].iter().copied().find(|&e| {
            let edge = net.edge(e);
            let rest = dist[edge.to.idx()];
            rest < here && same_cost(here, edge.free_flow_time() + rest)
        })?;
        path.push(next);
        at = net.edge(next).to;
    }
    Some(path)
}

/// Routes every trip on the free-flow shortest path. Routing is parallel
/// per destination; output keeps the input trip order.
pub fn route_all(net: &RoadNetwork, trips: &[Trip]) -> RouteSet {
    let mut by_destination: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
    for (i, t) in trips.iter().enumerate() {
        by_destination.entry(t.destination).or_default().push(i);
    }
    let groups: Vec<(NodeId, Vec<usize>)> = by_destination.into_iter().collect();
    let solved: Vec<Vec<(usize, Option<Vec<EdgeId>>)>> = groups
        .par_iter()
        .map(|(dest, members)| {
            let dist = costs_to(net, *dest);
            let mut cache: HashMap<NodeId, Option<Vec<EdgeId>>> = HashMap::new();
            members
                .iter()
                .map(|&i| {
                    let origin = trips[i].origin;
                    let path = cache
                        .entry(origin)
                        .or_insert_with(|| trace_route(net, &dist, origin, *dest))
                        .clone();
                    (i, path)
                })
                .collect()
        })
        .collect();

    let mut slots: Vec<Option<Option<Vec<EdgeId>>>> = vec![None; trips.len()];
    for group in solved {
        for (i, path) in group {
            slots[i] = Some(path);
        }
    }
    let mut out = RouteSet::default();
    for (t, slot) in trips.iter().zip(slots) {
        match slot.flatten() {
            Some(edges) => out.routes.push(Route { trip: t.id, edges }),
            None => out.unreachable.push(t.id),
        }
    }
    out
}

/// Checks that `route` is a connected nonempty path from the trip's origin
/// to its destination.
pub fn validate_route(net: &RoadNetwork, trip: &Trip, route: &Route) -> Result<(), DemandError> {
    let bad = |msg: &str| DemandError::BadRoute { trip: trip.id, msg: msg.to_string() };
    let first = route.edges.first().ok_or_else(|| bad("empty route"))?;
    let last = route.edges.last().unwrap();
    if net.edge(*first).from != trip.origin {
        return Err(bad("does not start at the origin"));
    }
    if net.edge(*last).to != trip.destination {
        return Err(bad("does not end at the destination"));
    }
    for w in route.edges.windows(2) {
        if net.edge(w[0]).to != net.edge(w[1]).from {
            return Err(bad("consecutive edges do not share a node"));
        }
    }
    Ok(())
}

/// Route cache format: `trip_id,edge edge edge` using edge labels.
pub fn write_routes(routes: &[Route], net: &RoadNetwork) -> String {
    let mut out = String::new();
    for r in routes {
        let _ = write!(out, "{},", r.trip);
        for (i, e) in r.edges.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{}", net.edge(*e).label);
        }
        out.push('\n');
    }
    out
}

pub fn parse_routes(text: &str, net: &RoadNetwork) -> Result<Vec<Route>, DemandError> {
    let mut routes = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let (id, rest) = t.split_once(',').ok_or(DemandError::Parse {
            line,
            msg: "expected `trip_id,edges`".into(),
        })?;
        let trip: u64 = id.trim().parse().map_err(|_| DemandError::Parse {
            line,
            msg: format!("bad trip id {id:?}"),
        })?;
        let edges = rest
            .split_whitespace()
            .map(|tok| {
                tok.parse::<i64>()
                    .ok()
                    .and_then(|l| net.edge_by_label(l))
                    .ok_or(DemandError::Parse { line, msg: format!("unknown edge {tok:?}") })
            })
            .collect::<Result<Vec<_>, _>>()?;
        routes.push(Route { trip, edges });
    }
    Ok(routes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::parse_network;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_nodes() -> RoadNetwork {
        parse_network("node,0,0,0,0\nnode,1,10,0,0\nedge,0,0,1,10,1,10\n").unwrap()
    }

    #[test]
    fn single_trip_line() {
        let net = two_nodes();
        let trips = parse_demand("0,0,1,3600.0\n", &net).unwrap();
        assert_eq!(trips.len(), 1);
        assert_eq!(trips[0].depart_s, 3600.0);
        assert_eq!(trips[0].vehicle_type, VehicleType::Car);
    }

    #[test]
    fn validation_errors() {
        let net = two_nodes();
        assert!(matches!(parse_demand("0,1,1,5\n", &net), Err(DemandError::SameEndpoints { trip: 0 })));
        assert!(matches!(
            parse_demand("0,0,7,5\n", &net),
            Err(DemandError::UnknownNode { node: 7, .. })
        ));
        assert!(matches!(
            parse_demand("0,0,1,-1\n", &net),
            Err(DemandError::NegativeDeparture { .. })
        ));
        assert!(matches!(parse_demand("0,0,1\n", &net), Err(DemandError::Parse { line: 1, .. })));
        assert!(matches!(
            parse_demand("0,0,1,1\n0,1,0,2\n", &net),
            Err(DemandError::DuplicateTrip(0))
        ));
    }

    #[test]
    fn single_edge_route() {
        let net = two_nodes();
        let trips = parse_demand("0,0,1,0\n", &net).unwrap();
        let rs = route_all(&net, &trips);
        assert_eq!(rs.routes, vec![Route { trip: 0, edges: vec![EdgeId(0)] }]);
    }

    #[test]
    fn triangle_prefers_two_cheap_edges() {
        // 0->1 and 1->2 take 1 s each; 0->2 takes 3 s
        let net = parse_network(
            "node,0,0,0,0\nnode,1,1,0,0\nnode,2,2,0,0\n\
             edge,0,0,2,30,1,10\nedge,1,0,1,10,1,10\nedge,2,1,2,10,1,10\n",
        )
        .unwrap();
        let trips = parse_demand("5,0,2,0\n", &net).unwrap();
        let rs = route_all(&net, &trips);
        assert_eq!(rs.routes[0].edges, vec![EdgeId(1), EdgeId(2)]);
    }

    #[test]
    fn parallel_edges_tie_break_to_smaller_id() {
        let net = parse_network(
            "node,0,0,0,0\nnode,1,1,0,0\nedge,1,0,1,10,1,10\nedge,2,0,1,10,1,10\n",
        )
        .unwrap();
        let trips = parse_demand("0,0,1,0\n", &net).unwrap();
        let rs = route_all(&net, &trips);
        assert_eq!(rs.routes[0].edges, vec![net.edge_by_label(1).unwrap()]);
    }

    #[test]
    fn unreachable_trips_are_reported() {
        let net = two_nodes();
        let trips = parse_demand("0,1,0,0\n1,0,1,0\n", &net).unwrap();
        let rs = route_all(&net, &trips);
        assert_eq!(rs.unreachable, vec![0]);
        assert_eq!(rs.routes.len(), 1);
    }

    #[test]
    fn sort_examples() {
        let net = two_nodes();
        let mut trips = parse_demand("0,0,1,5\n1,0,1,1\n2,0,1,3\n", &net).unwrap();
        sort_by_departure(&mut trips);
        let d: Vec<_> = trips.iter().map(|t| t.depart_s).collect();
        assert_eq!(d, vec![1.0, 3.0, 5.0]);

        let mut tied = parse_demand("0,0,1,2\n1,0,1,1\n2,0,1,2\n3,0,1,1\n", &net).unwrap();
        sort_by_departure(&mut tied);
        let ids: Vec<_> = tied.iter().map(|t| t.id).collect();
        assert_eq!(ids, vec![1, 3, 0, 2]);
        let before = tied.clone();
        sort_by_departure(&mut tied);
        assert_eq!(before, tied);
    }

    #[test]
    fn sorting_ten_thousand_is_a_monotone_permutation() {
        let net = two_nodes();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut trips: Vec<Trip> = (0..10_000)
            .map(|i| Trip {
                id: i,
                origin: NodeId(0),
                destination: NodeId(1),
                depart_s: (rng.random_range(0..600) as f64) * 0.5,
                vehicle_type: VehicleType::Car,
            })
            .collect();
        let mut oracle = trips.clone();
        // comparison-sort oracle keyed on (time, input position)
        oracle.sort_by(|a, b| a.depart_s.total_cmp(&b.depart_s).then(a.id.cmp(&b.id)));
        sort_by_departure(&mut trips);
        assert_eq!(trips, oracle);
        let _ = net;
    }

    #[test]
    fn route_cache_round_trip() {
        let net = parse_network(
            "node,0,0,0,0\nnode,1,1,0,0\nnode,2,2,0,0\n\
             edge,10,0,1,10,1,10\nedge,11,1,2,10,1,10\n",
        )
        .unwrap();
        let routes = vec![Route { trip: 4, edges: vec![EdgeId(0), EdgeId(1)] }];
        assert_eq!(parse_routes(&write_routes(&routes, &net), &net).unwrap(), routes);
    }

    /// Independent Bellman–Ford over the edge list.
    fn bellman_ford(net: &RoadNetwork, source: NodeId) -> Vec<f64> {
        let mut d = vec![f64::INFINITY; net.node_count()];
        d[source.idx()] = 0.0;
        for _ in 0..net.node_count() {
            for e in &net.edges {
                let cand = d[e.from.idx()] + e.length_m / e.free_flow_speed;
                if cand < d[e.to.idx()] {
                    d[e.to.idx()] = cand;
                }
            }
        }
        d
    }

    fn random_network(seed: u64, n: usize, m: usize) -> RoadNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut text = String::new();
        for i in 0..n {
            let _ = writeln!(text, "node,{i},{},{},0", rng.random_range(0..100), rng.random_range(0..100));
        }
        for j in 0..m {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n);
            if b == a {
                b = (a + 1) % n;
            }
            let len = rng.random_range(1..20) as f64 * 5.0;
            let speed = [5.0, 10.0, 20.0][rng.random_range(0..3)];
            let _ = writeln!(text, "edge,{j},{a},{b},{len},1,{speed}");
        }
        parse_network(&text).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn routes_match_bellman_ford(seed in 0u64..10_000, n in 3usize..50) {
            let net = random_network(seed, n, n * 3);
            let trips: Vec<Trip> = (0..n as u64)
                .flat_map(|o| (0..n as u64).filter(move |&d| d != o).map(move |d| (o, d)))
                .enumerate()
                .map(|(i, (o, d))| Trip {
                    id: i as u64,
                    origin: NodeId(o as u32),
                    destination: NodeId(d as u32),
                    depart_s: 0.0,
                    vehicle_type: VehicleType::Car,
                })
                .collect();
            let rs = route_all(&net, &trips);
            let by_trip: HashMap<u64, &Route> = rs.routes.iter().map(|r| (r.trip, r)).collect();
            for t in &trips {
                let oracle = bellman_ford(&net, t.origin)[t.destination.idx()];
                match by_trip.get(&t.id) {
                    Some(r) => {
                        validate_route(&net, t, r).unwrap();
                        let cost: f64 = r.edges.iter().map(|&e| net.edge(e).free_flow_time()).sum();
                        prop_assert!((cost - oracle).abs() <= 1e-9 * oracle.max(1.0));
                    }
                    None => {
                        prop_assert!(oracle.is_infinite());
                        prop_assert!(rs.unreachable.contains(&t.id));
                    }
                }
            }
        }
    }
}
