//! Road graph, its text format, and the byte lane map built from it.

mod io;
mod lane_map;

pub use io::{load_network, parse_network, write_network};
pub use lane_map::{
    decode_speed, encode_speed, Claim, LaneMap, LaneSpan, FREE_CELL, MAX_SPEED_BYTE,
};

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;

/// Dense node index (position in [`RoadNetwork::nodes`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

/// Dense edge index (position in [`RoadNetwork::edges`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeId(pub u32);

impl NodeId {
    #[inline]
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl EdgeId {
    #[inline]
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

/// Edges shorter than this cannot be represented at one byte per meter.
pub const MIN_LINK_LENGTH_M: f64 = 1.0;

/// Highest free-flow speed the byte encoding can carry.
pub const MAX_FREE_FLOW_SPEED: f64 = 254.0;

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: i64 },
    #[error("edge {edge} references missing node {node}")]
    MissingEndpoint { edge: i64, node: i64 },
    #[error("edge {edge}: length {length} m is below the minimum link length {min} m")]
    TooShort { edge: i64, length: f64, min: f64 },
    #[error("edge {edge}: {msg}")]
    BadEdge { edge: i64, msg: String },
    #[error("lane map needs {needed} bytes, budget is {budget}")]
    LaneMapBudget { needed: usize, budget: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    /// Identifier as written in the input file.
    pub label: i64,
    pub x: f64,
    pub y: f64,
    pub signalized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub label: i64,
    pub from: NodeId,
    pub to: NodeId,
    pub length_m: f64,
    pub lanes: u8,
    /// Speed limit of the edge, m/s.
    pub free_flow_speed: f64,
    /// Byte index of lane 0, cell 0 in the global lane map.
    pub lane_map_offset: usize,
}

impl Edge {
    /// Cells per lane: the length rounded up to whole meters.
    #[inline]
    pub fn cells(&self) -> usize {
        self.length_m.ceil() as usize
    }

    /// Bytes the edge occupies in a lane map.
    #[inline]
    pub fn footprint(&self) -> usize {
        self.cells() * self.lanes as usize
    }

    /// Free-flow traversal time, the routing cost.
    #[inline]
    pub fn free_flow_time(&self) -> f64 {
        self.length_m / self.free_flow_speed
    }
}

/// Raw node record before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: i64,
    pub x: f64,
    pub y: f64,
    pub signalized: bool,
}

/// Raw edge record before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRecord {
    pub id: i64,
    pub from: i64,
    pub to: i64,
    pub length_m: f64,
    pub lanes: u32,
    pub free_flow_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    /// Outgoing edge ids per node, ascending.
    pub adjacency: Vec<Vec<EdgeId>>,
    /// Incoming edge ids per node, ascending.
    pub incoming: Vec<Vec<EdgeId>>,
    pub min_link_length: f64,
    node_labels: HashMap<i64, NodeId>,
    edge_labels: HashMap<i64, EdgeId>,
}

impl RoadNetwork {
    /// Validates raw records and assigns dense ids in ascending label order.
    /// Lane-map offsets are laid out contiguously in edge id order.
    pub fn from_records(
        mut nodes: Vec<NodeRecord>,
        mut edges: Vec<EdgeRecord>,
    ) -> Result<Self, NetworkError> {
        nodes.sort_by_key(|n| n.id);
        edges.sort_by_key(|e| e.id);

        let mut node_labels = HashMap::with_capacity(nodes.len());
        let mut out_nodes = Vec::with_capacity(nodes.len());
        for (i, rec) in nodes.iter().enumerate() {
            let id = NodeId(i as u32);
            if node_labels.insert(rec.id, id).is_some() {
                return Err(NetworkError::DuplicateId { kind: "node", id: rec.id });
            }
            out_nodes.push(Node {
                id,
                label: rec.id,
                x: rec.x,
                y: rec.y,
                signalized: rec.signalized,
            });
        }

        let mut edge_labels = HashMap::with_capacity(edges.len());
        let mut out_edges = Vec::with_capacity(edges.len());
        let mut offset = 0usize;
        for (i, rec) in edges.iter().enumerate() {
            let id = EdgeId(i as u32);
            if edge_labels.insert(rec.id, id).is_some() {
                return Err(NetworkError::DuplicateId { kind: "edge", id: rec.id });
            }
            let from = *node_labels
                .get(&rec.from)
                .ok_or(NetworkError::MissingEndpoint { edge: rec.id, node: rec.from })?;
            let to = *node_labels
                .get(&rec.to)
                .ok_or(NetworkError::MissingEndpoint { edge: rec.id, node: rec.to })?;
            if !(rec.length_m.is_finite() && rec.length_m >= MIN_LINK_LENGTH_M) {
                return Err(NetworkError::TooShort {
                    edge: rec.id,
                    length: rec.length_m,
                    min: MIN_LINK_LENGTH_M,
                });
            }
            if rec.lanes == 0 || rec.lanes > u8::MAX as u32 {
                return Err(NetworkError::BadEdge {
                    edge: rec.id,
                    msg: format!("lane count {} outside 1..=255", rec.lanes),
                });
            }
            if !(rec.free_flow_mps > 0.0 && rec.free_flow_mps <= MAX_FREE_FLOW_SPEED) {
                return Err(NetworkError::BadEdge {
                    edge: rec.id,
                    msg: format!("free-flow speed {} outside (0, 254]", rec.free_flow_mps),
                });
            }
            let edge = Edge {
                id,
                label: rec.id,
                from,
                to,
                length_m: rec.length_m,
                lanes: rec.lanes as u8,
                free_flow_speed: rec.free_flow_mps,
                lane_map_offset: offset,
            };
            offset += edge.footprint();
            out_edges.push(edge);
        }

        let mut adjacency = vec![Vec::new(); out_nodes.len()];
        let mut incoming = vec![Vec::new(); out_nodes.len()];
        for e in &out_edges {
            adjacency[e.from.idx()].push(e.id);
            incoming[e.to.idx()].push(e.id);
        }

        Ok(Self {
            nodes: out_nodes,
            edges: out_edges,
            adjacency,
            incoming,
            min_link_length: MIN_LINK_LENGTH_M,
            node_labels,
            edge_labels,
        })
    }

    #[inline]
    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id.idx()]
    }

    #[inline]
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.idx()]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_by_label(&self, label: i64) -> Option<NodeId> {
        self.node_labels.get(&label).copied()
    }

    pub fn edge_by_label(&self, label: i64) -> Option<EdgeId> {
        self.edge_labels.get(&label).copied()
    }

    /// Total bytes of the global lane map.
    pub fn lane_map_size(&self) -> usize {
        self.edges.iter().map(Edge::footprint).sum()
    }

    pub fn max_free_flow_speed(&self) -> f64 {
        self.edges.iter().map(|e| e.free_flow_speed).fold(0.0, f64::max)
    }

    pub fn min_edge_length(&self) -> Option<f64> {
        self.edges.iter().map(|e| e.length_m).reduce(f64::min)
    }

    /// Materializes the all-free lane map for every edge, using the offsets
    /// recorded on the edges. Fails when the image would exceed `budget` bytes.
    pub fn build_lane_map(&self, budget: Option<usize>) -> Result<LaneMap, NetworkError> {
        let needed = self.lane_map_size();
        if let Some(budget) = budget {
            if needed > budget {
                return Err(NetworkError::LaneMapBudget { needed, budget });
            }
        }
        Ok(LaneMap::for_edges(self, self.edges.iter().map(|e| e.id)))
    }

    /// Global byte index of (edge, lane, cell).
    #[inline]
    pub fn cell_index(&self, edge: EdgeId, lane: u8, cell: usize) -> usize {
        let e = self.edge(edge);
        e.lane_map_offset + lane as usize * e.cells() + cell
    }

    /// Inverse of [`cell_index`](Self::cell_index).
    pub fn locate_cell(&self, index: usize) -> Option<(EdgeId, u8, usize)> {
        let pos = self
            .edges
            .partition_point(|e| e.lane_map_offset + e.footprint() <= index);
        let e = self.edges.get(pos)?;
        if index < e.lane_map_offset {
            return None;
        }
        let rel = index - e.lane_map_offset;
        Some((e.id, (rel / e.cells()) as u8, rel % e.cells()))
    }

    /// Length of a path in meters.
    pub fn path_length(&self, path: &[EdgeId]) -> f64 {
        path.iter().map(|&e| self.edge(e).length_m).sum()
    }
}
