use super::{DynamicsError, Move, MoveKind};
use crate::demand::{Route, VehicleType};
use crate::network::{EdgeId, RoadNetwork};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Waiting,
    OnRoad,
    /// Read-only replica held by the upstream shard of a ghost edge.
    InGhost,
    Finished,
    MarkedForRemoval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub trip: u64,
    /// Index of the trip in the global trip and route tables.
    pub trip_index: u32,
    pub vehicle_type: VehicleType,
    pub depart_s: f64,
    pub phase: Phase,

    pub edge: EdgeId,
    pub lane: u8,
    pub offset_m: f64,
    pub speed: f64,
    pub accel: f64,

    /// Position of `edge` in the route.
    pub route_pos: u32,
    pub prev_edge: Option<EdgeId>,
    pub next_edge: Option<EdgeId>,

    pub enter_network_s: Option<f64>,
    pub edge_entry_time: f64,
    pub arrive_s: Option<f64>,
    /// Length of fully traversed edges, m.
    pub distance_m: f64,
    pub edge_entries: Vec<f64>,
}

impl VehicleState {
    pub fn waiting(trip: u64, trip_index: u32, depart_s: f64, vehicle_type: VehicleType) -> Self {
        Self {
            trip,
            trip_index,
            vehicle_type,
            depart_s,
            phase: Phase::Waiting,
            edge: EdgeId(u32::MAX),
            lane: 0,
            offset_m: 0.0,
            speed: 0.0,
            accel: 0.0,
            route_pos: 0,
            prev_edge: None,
            next_edge: None,
            enter_network_s: None,
            edge_entry_time: 0.0,
            arrive_s: None,
            distance_m: 0.0,
            edge_entries: Vec::new(),
        }
    }

    #[inline]
    pub fn is_on_road(&self) -> bool {
        matches!(self.phase, Phase::OnRoad)
    }

    /// Integer cell of the head on the current edge.
    #[inline]
    pub fn cell(&self) -> usize {
        self.offset_m.max(0.0) as usize
    }

    /// Applies the committed move. `t_next` is the clock after this step.
    pub fn apply(&mut self, m: &Move, route: &Route, net: &RoadNetwork, t_next: f64) -> Result<(), DynamicsError> {
        match m.kind {
            MoveKind::Wait => {}
            MoveKind::Depart => {
                self.phase = Phase::OnRoad;
                self.edge = m.edge;
                self.lane = m.lane;
                self.offset_m = m.offset_m;
                self.speed = m.speed;
                self.accel = m.accel;
                self.route_pos = 0;
                self.prev_edge = None;
                self.next_edge = route.edges.get(1).copied();
                self.enter_network_s = Some(t_next);
                self.edge_entry_time = t_next;
                self.edge_entries.push(t_next);
            }
            MoveKind::Stay => {
                self.lane = m.lane;
                self.offset_m = m.offset_m;
                self.speed = m.speed;
                self.accel = m.accel;
            }
            MoveKind::EnterNext => {
                let next = self
                    .next_edge
                    .ok_or(DynamicsError::RouteExhausted { trip: self.trip, edge: self.edge })?;
                self.distance_m += net.edge(self.edge).length_m;
                self.prev_edge = Some(self.edge);
                self.edge = next;
                self.route_pos += 1;
                self.next_edge = route.edges.get(self.route_pos as usize + 1).copied();
                self.lane = m.lane;
                self.offset_m = m.offset_m;
                self.speed = m.speed;
                self.accel = m.accel;
                self.edge_entry_time = t_next;
                self.edge_entries.push(t_next);
            }
            MoveKind::Finish => {
                self.distance_m += net.edge(self.edge).length_m;
                self.offset_m = net.edge(self.edge).length_m;
                self.speed = m.speed;
                self.accel = m.accel;
                self.phase = Phase::Finished;
                self.arrive_s = Some(t_next);
            }
        }
        Ok(())
    }
}
