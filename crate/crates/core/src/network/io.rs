//! Line-oriented network text format:
//!
//! ```text
//! # comment
//! node,<id>,<x>,<y>,<signalized:0|1>
//! edge,<id>,<from>,<to>,<length_m>,<lanes>,<free_flow_mps>
//! ```

use super::{EdgeRecord, NetworkError, NodeRecord, RoadNetwork};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

pub fn load_network(path: impl AsRef<Path>) -> Result<RoadNetwork, NetworkError> {
    let text = std::fs::read_to_string(path)?;
    parse_network(&text)
}

fn field<T: FromStr>(parts: &[&str], i: usize, name: &str, line: usize) -> Result<T, NetworkError> {
    let raw = parts.get(i).ok_or_else(|| NetworkError::Parse {
        line,
        msg: format!("missing field `{name}`"),
    })?;
    raw.trim().parse().map_err(|_| NetworkError::Parse {
        line,
        msg: format!("bad value {raw:?} for `{name}`"),
    })
}

fn flag(raw: &str, line: usize) -> Result<bool, NetworkError> {
    match raw.trim() {
        "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        other => Err(NetworkError::Parse { line, msg: format!("bad signalized flag {other:?}") }),
    }
}

pub fn parse_network(text: &str) -> Result<RoadNetwork, NetworkError> {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = trimmed.split(',').collect();
        match parts[0].trim() {
            "node" => {
                if parts.len() != 5 {
                    return Err(NetworkError::Parse {
                        line,
                        msg: format!("node record needs 5 fields, found {}", parts.len()),
                    });
                }
                nodes.push(NodeRecord {
                    id: field(&parts, 1, "id", line)?,
                    x: field(&parts, 2, "x", line)?,
                    y: field(&parts, 3, "y", line)?,
                    signalized: flag(parts[4], line)?,
                });
            }
            "edge" => {
                if parts.len() != 7 {
                    return Err(NetworkError::Parse {
                        line,
                        msg: format!("edge record needs 7 fields, found {}", parts.len()),
                    });
                }
                edges.push(EdgeRecord {
                    id: field(&parts, 1, "id", line)?,
                    from: field(&parts, 2, "from", line)?,
                    to: field(&parts, 3, "to", line)?,
                    length_m: field(&parts, 4, "length_m", line)?,
                    lanes: field(&parts, 5, "lanes", line)?,
                    free_flow_mps: field(&parts, 6, "free_flow_mps", line)?,
                });
            }
            other => {
                return Err(NetworkError::Parse { line, msg: format!("unknown record kind {other:?}") })
            }
        }
    }
    RoadNetwork::from_records(nodes, edges)
}

/// Serializes with original labels; `parse_network(write_network(n)) == n`.
pub fn write_network(net: &RoadNetwork) -> String {
    let mut out = String::from("# lanesim network v1\n");
    for n in &net.nodes {
        let _ = writeln!(out, "node,{},{},{},{}", n.label, n.x, n.y, n.signalized as u8);
    }
    for e in &net.edges {
        let _ = writeln!(
            out,
            "edge,{},{},{},{},{},{}",
            e.label,
            net.node(e.from).label,
            net.node(e.to).label,
            e.length_m,
            e.lanes,
            e.free_flow_speed
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::EdgeId;

    #[test]
    fn smallest_graph() {
        let net = parse_network("node,0,0,0,0\nnode,1,8,0,0\nedge,0,0,1,8,4,13.9\n").unwrap();
        assert_eq!(net.edge_count(), 1);
        assert_eq!(net.adjacency[0], vec![EdgeId(0)]);
        assert_eq!(net.edge(EdgeId(0)).footprint(), 32);
    }

    #[test]
    fn dangling_edge_rejected() {
        let err = parse_network("node,0,0,0,0\nnode,1,8,0,0\nedge,0,0,99,8,1,13.9\n").unwrap_err();
        assert!(matches!(err, NetworkError::MissingEndpoint { node: 99, .. }));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_network("# header\nnode,0,0,0,0\nnode,1,x,0,0\n").unwrap_err();
        assert!(matches!(err, NetworkError::Parse { line: 3, .. }), "{err}");
        let err = parse_network("\nedge,0,0,1\n").unwrap_err();
        assert!(matches!(err, NetworkError::Parse { line: 2, .. }), "{err}");
        let err = parse_network("road,1\n").unwrap_err();
        assert!(matches!(err, NetworkError::Parse { line: 1, .. }));
    }

    #[test]
    fn write_then_parse_is_identity() {
        let text = "node,3,0.5,-2,1\nnode,8,10.25,0,0\nedge,4,3,8,10.7,2,12.5\nedge,1,8,3,11,1,30\n";
        let net = parse_network(text).unwrap();
        let again = parse_network(&write_network(&net)).unwrap();
        assert_eq!(net, again);
    }
}
