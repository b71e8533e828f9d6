use super::{
    gap_accept, idm_accel, idm_free_accel, integrate, mandatory_lc_probability, DynamicsConfig,
    DynamicsError, GapParams, Phase, VehicleState,
};
use crate::demand::Route;
use crate::network::{encode_speed, EdgeId, LaneMap, NodeId, RoadNetwork};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Immutable step-k view a vehicle update may read.
pub struct WorldView<'a> {
    pub net: &'a RoadNetwork,
    /// Lane map snapshot at step k.
    pub map: &'a LaneMap,
    /// Routes indexed by trip index.
    pub routes: &'a [Route],
    pub now: f64,
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoveKind {
    Wait,
    Depart,
    Stay,
    EnterNext,
    Finish,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Move {
    pub kind: MoveKind,
    pub edge: EdgeId,
    pub lane: u8,
    pub offset_m: f64,
    pub speed: f64,
    pub accel: f64,
}

/// One candidate outcome and the next-map cell it must claim, if any.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub mv: Move,
    pub cell: Option<usize>,
}

/// Outcome of planning one vehicle: candidates tried in order until a claim
/// succeeds. Plain in-lane moves are never contested; departures, edge
/// entries and lane changes are, and must be resolved in a canonical order
/// when determinism is required.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPlan {
    pub trip: u64,
    pub contested: bool,
    pub primary: Candidate,
    pub fallback: Option<Candidate>,
    pub hold: Option<Candidate>,
}

impl StepPlan {
    fn single(trip: u64, mv: Move, cell: Option<usize>) -> Self {
        Self { trip, contested: false, primary: Candidate { mv, cell }, fallback: None, hold: None }
    }
}

/// Claims the first available candidate cell of `plan` in `next`.
pub fn commit(plan: &StepPlan, next: &LaneMap) -> Result<Move, DynamicsError> {
    for cand in std::iter::once(&plan.primary).chain(&plan.fallback).chain(&plan.hold) {
        match cand.cell {
            None => return Ok(cand.mv),
            Some(idx) => {
                let byte = encode_speed(cand.mv.speed);
                if next.claim_cell(idx, byte).expect("speed byte is never 255") {
                    return Ok(cand.mv);
                }
            }
        }
    }
    Err(DynamicsError::CellConflict { trip: plan.trip })
}

/// Uniform draw for the lane-change decision plus the two gap noise terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneChangeDraws {
    pub u: f64,
    pub eps_a: f64,
    pub eps_b: f64,
}

/// Counter-based draws keyed by (seed, trip, step): independent of update
/// order, worker count and shard layout.
pub fn lane_change_draws(seed: u64, trip: u64, step: u64, gap: &GapParams) -> LaneChangeDraws {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trip);
    rng.set_word_pos(step as u128 * 16);
    let u: f64 = rng.random();
    let za: f64 = rng.sample(StandardNormal);
    let zb: f64 = rng.sample(StandardNormal);
    LaneChangeDraws { u, eps_a: gap.sigma_a * za, eps_b: gap.sigma_b * zb }
}

/// Lane a vehicle must be in before turning from `from` onto `to`: the
/// rightmost lane (0) for right turns, the leftmost for left and U-turns.
/// `None` when going straight or on single-lane edges.
pub fn required_lane(net: &RoadNetwork, from: EdgeId, to: EdgeId) -> Option<u8> {
    let e = net.edge(from);
    if e.lanes < 2 {
        return None;
    }
    let dir = |id: EdgeId| {
        let ed = net.edge(id);
        let (a, b) = (net.node(ed.from), net.node(ed.to));
        (b.x - a.x, b.y - a.y)
    };
    let (x1, y1) = dir(from);
    let (x2, y2) = dir(to);
    let norm = (x1.hypot(y1)) * (x2.hypot(y2));
    if norm == 0.0 {
        return None;
    }
    let sin = (x1 * y2 - y1 * x2) / norm;
    let cos = (x1 * x2 + y1 * y2) / norm;
    if sin > 0.3 || (cos < -0.9) {
        Some(e.lanes - 1)
    } else if sin < -0.3 {
        Some(0)
    } else {
        None
    }
}

/// Fixed-cycle two-phase control: incoming edges alternate between the two
/// phases by their position in the node's incoming list. Unsignalized
/// nodes always allow entry.
pub fn signal_allows(net: &RoadNetwork, node: NodeId, incoming: EdgeId, now: f64, cycle_s: f64) -> bool {
    if !net.node(node).signalized {
        return true;
    }
    let pos = net.incoming[node.idx()].iter().position(|&e| e == incoming).unwrap_or(0);
    let half = cycle_s / 2.0;
    let active = ((now / half).floor() as u64) % 2;
    active == (pos as u64 % 2)
}

/// Plans the step-k → k+1 update of one vehicle from the snapshot alone.
///
/// Waiting vehicles depart once the clock has reached their departure time
/// and a first cell of their first edge is free. On-road vehicles look
/// ahead `max(2·dt·v, s0 + 1)` meters, follow a leader with the IDM or
/// relax toward the speed limit, never advance onto or past the nearest
/// occupied cell, enter the next edge only through a free first cell, and
/// consider a mandatory lane change when nearing a turn.
pub fn step_vehicle(v: &VehicleState, view: &WorldView, cfg: &DynamicsConfig) -> Result<StepPlan, DynamicsError> {
    match v.phase {
        Phase::Waiting => plan_departure(v, view),
        Phase::OnRoad => plan_on_road(v, view, cfg),
        _ => Ok(StepPlan::single(v.trip, stay_move(v), None)),
    }
}

fn stay_move(v: &VehicleState) -> Move {
    Move {
        kind: if v.phase == Phase::Waiting { MoveKind::Wait } else { MoveKind::Stay },
        edge: v.edge,
        lane: v.lane,
        offset_m: v.offset_m,
        speed: v.speed,
        accel: v.accel,
    }
}

fn plan_departure(v: &VehicleState, view: &WorldView) -> Result<StepPlan, DynamicsError> {
    let wait = Move { kind: MoveKind::Wait, ..stay_move(v) };
    if view.now < v.depart_s {
        return Ok(StepPlan::single(v.trip, wait, None));
    }
    let route = &view.routes[v.trip_index as usize];
    let first = *route
        .edges
        .first()
        .ok_or(DynamicsError::RouteExhausted { trip: v.trip, edge: v.edge })?;
    let span = view.map.span(first).ok_or(DynamicsError::MissingEdge { trip: v.trip, edge: first })?;
    let free_lane = (0..span.lanes).find(|&l| view.map.is_free(span.index(l, 0)));
    let Some(lane) = free_lane else {
        return Ok(StepPlan::single(v.trip, wait, None));
    };
    let depart = Move { kind: MoveKind::Depart, edge: first, lane, offset_m: 0.0, speed: 0.0, accel: 0.0 };
    Ok(StepPlan {
        trip: v.trip,
        contested: true,
        primary: Candidate { mv: depart, cell: Some(span.index(lane, 0)) },
        fallback: Some(Candidate { mv: wait, cell: None }),
        hold: None,
    })
}

fn plan_on_road(v: &VehicleState, view: &WorldView, cfg: &DynamicsConfig) -> Result<StepPlan, DynamicsError> {
    let net = view.net;
    let map = view.map;
    let edge = net.edge(v.edge);
    let span = map.span(v.edge).ok_or(DynamicsError::MissingEdge { trip: v.trip, edge: v.edge })?;
    let p = cfg.idm(v.vehicle_type);
    let v0 = edge.free_flow_speed;
    let n = span.cells;
    let cell = v.cell().min(n - 1);
    let dt = cfg.dt;

    let d_front = (2.0 * dt * v.speed).ceil() as usize;
    let horizon = d_front.max(p.s0.ceil() as usize + 1);
    let accel = match map.probe_ahead(span, v.lane, cell, horizon) {
        Some((gap, v_front)) => idm_accel(v.speed, v0, gap as f64, v.speed - v_front, p)
            .map_err(|_| DynamicsError::NonPositiveGap { trip: v.trip, gap: gap as f64 })?,
        None => idm_free_accel(v.speed, v0, p),
    };
    let (dx, v1) = integrate(v.speed, accel, dt);
    let mut speed = v1.min(v0);
    let mut x1 = v.offset_m + dx;

    let hold = Candidate {
        mv: Move { kind: MoveKind::Stay, edge: v.edge, lane: v.lane, offset_m: v.offset_m, speed: 0.0, accel },
        cell: Some(span.index(v.lane, cell)),
    };

    // never advance onto or past an occupied cell of the snapshot
    let reach = (x1.floor() as usize).saturating_sub(cell);
    let blocked = match map.probe_ahead(span, v.lane, cell, reach) {
        Some((d, v_block)) => {
            x1 = x1.min((cell + d - 1) as f64).max(v.offset_m);
            speed = speed.min(v_block);
            true
        }
        None => false,
    };

    let in_lane = |x: f64, s: f64| {
        let c = (x.floor() as usize).min(n - 1);
        Candidate {
            mv: Move { kind: MoveKind::Stay, edge: v.edge, lane: v.lane, offset_m: x, speed: s, accel },
            cell: Some(span.index(v.lane, c)),
        }
    };

    if !blocked {
        let at_end = x1 >= edge.length_m || (cell == n - 1 && dx > 0.0);
        match v.next_edge {
            None if x1 >= edge.length_m => {
                let mv = Move { kind: MoveKind::Finish, edge: v.edge, lane: v.lane, offset_m: x1, speed, accel };
                return Ok(StepPlan::single(v.trip, mv, None));
            }
            Some(next) if at_end => {
                let stop_line = in_lane(((n - 1) as f64).max(v.offset_m), 0.0);
                let next_span = map.span(next).ok_or(DynamicsError::MissingEdge { trip: v.trip, edge: next })?;
                let green = signal_allows(net, edge.to, v.edge, view.now, cfg.signal_cycle_s);
                let preferred = v.lane.min(next_span.lanes - 1);
                let entry_lane = std::iter::once(preferred)
                    .chain((0..next_span.lanes).filter(|&l| l != preferred))
                    .find(|&l| map.is_free(next_span.index(l, 0)));
                let plan = match (green, entry_lane) {
                    (true, Some(lane)) => {
                        let next_v0 = net.edge(next).free_flow_speed;
                        let mv = Move {
                            kind: MoveKind::EnterNext,
                            edge: next,
                            lane,
                            offset_m: 0.0,
                            speed: speed.min(next_v0),
                            accel,
                        };
                        StepPlan {
                            trip: v.trip,
                            contested: true,
                            primary: Candidate { mv, cell: Some(next_span.index(lane, 0)) },
                            fallback: Some(stop_line),
                            hold: Some(hold),
                        }
                    }
                    _ => StepPlan {
                        trip: v.trip,
                        contested: true,
                        primary: stop_line,
                        fallback: Some(hold),
                        hold: None,
                    },
                };
                return Ok(plan);
            }
            None => {}
            Some(_) => {}
        }
        if x1 >= edge.length_m {
            return Err(DynamicsError::RouteExhausted { trip: v.trip, edge: v.edge });
        }
    }

    let stay = in_lane(x1, speed);
    if let Some(target) = lane_change_target(v, view, cfg, x1, speed, span) {
        return Ok(StepPlan {
            trip: v.trip,
            contested: true,
            primary: Candidate { mv: Move { lane: target.0, ..stay.mv }, cell: Some(target.1) },
            fallback: Some(stay),
            hold: Some(hold),
        });
    }
    Ok(StepPlan { trip: v.trip, contested: false, primary: stay, fallback: None, hold: Some(hold) })
}

/// Target (lane, cell index) of an accepted mandatory lane change.
fn lane_change_target(
    v: &VehicleState,
    view: &WorldView,
    cfg: &DynamicsConfig,
    x1: f64,
    speed: f64,
    span: crate::network::LaneSpan,
) -> Option<(u8, usize)> {
    let next = v.next_edge?;
    let required = required_lane(view.net, v.edge, next)?;
    if required == v.lane {
        return None;
    }
    let edge = view.net.edge(v.edge);
    let to_exit = (edge.length_m - x1).max(0.0);
    let prob = mandatory_lc_probability(to_exit, &cfg.lane_change);
    if prob <= 0.0 {
        return None;
    }
    let draws = lane_change_draws(cfg.seed, v.trip, view.step, &cfg.gap);
    if draws.u >= prob {
        return None;
    }
    let target = if required > v.lane { v.lane + 1 } else { v.lane - 1 };
    let c = (x1.floor() as usize).min(span.cells - 1);
    // first cells are reserved for entering vehicles
    if c == 0 {
        return None;
    }
    let idx = span.index(target, c);
    if !view.map.is_free(idx) {
        return None;
    }
    let (lead_gap, v_lead) = view
        .map
        .probe_ahead(span, target, c, span.cells)
        .map_or((f64::INFINITY, 0.0), |(d, s)| (d as f64, s));
    let (lag_gap, v_lag) = view
        .map
        .probe_behind(span, target, c)
        .map_or((f64::INFINITY, 0.0), |(d, s)| (d as f64, s));
    let probe = VehicleState { speed, ..v.clone() };
    gap_accept(&probe, lead_gap, lag_gap, v_lead, v_lag, &cfg.gap, (draws.eps_a, draws.eps_b))
        .then_some((target, idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::VehicleType;
    use crate::dynamics::IdmParams;
    use crate::network::{parse_network, FREE_CELL};

    fn line_net(len: f64, lanes: u32) -> RoadNetwork {
        parse_network(&format!(
            "node,0,0,0,0\nnode,1,{len},0,0\nnode,2,{},0,0\nedge,0,0,1,{len},{lanes},10\nedge,1,1,2,{len},{lanes},10\n",
            2.0 * len
        ))
        .unwrap()
    }

    fn on_road(trip: u64, edge: u32, offset: f64, speed: f64, next: Option<u32>) -> VehicleState {
        let mut v = VehicleState::waiting(trip, 0, 0.0, VehicleType::Car);
        v.phase = Phase::OnRoad;
        v.edge = EdgeId(edge);
        v.offset_m = offset;
        v.speed = speed;
        v.next_edge = next.map(EdgeId);
        v.route_pos = edge;
        v
    }

    fn routes() -> Vec<Route> {
        vec![Route { trip: 0, edges: vec![EdgeId(0), EdgeId(1)] }]
    }

    #[test]
    fn waiting_before_departure_time() {
        let net = line_net(100.0, 1);
        let map = net.build_lane_map(None).unwrap();
        let rs = routes();
        let view = WorldView { net: &net, map: &map, routes: &rs, now: 4.0, step: 8 };
        let v = VehicleState::waiting(0, 0, 5.0, VehicleType::Car);
        let plan = step_vehicle(&v, &view, &DynamicsConfig::default()).unwrap();
        assert_eq!(plan.primary.mv.kind, MoveKind::Wait);
        assert_eq!(plan.primary.cell, None);
    }

    #[test]
    fn departure_needs_free_first_cell() {
        let net = line_net(100.0, 1);
        let map = net.build_lane_map(None).unwrap();
        let rs = routes();
        let v = VehicleState::waiting(0, 0, 5.0, VehicleType::Car);
        let view = WorldView { net: &net, map: &map, routes: &rs, now: 5.0, step: 10 };
        let plan = step_vehicle(&v, &view, &DynamicsConfig::default()).unwrap();
        assert_eq!(plan.primary.mv.kind, MoveKind::Depart);
        assert_eq!(plan.primary.cell, Some(0));

        map.set(0, 3);
        let plan = step_vehicle(&v, &view, &DynamicsConfig::default()).unwrap();
        assert_eq!(plan.primary.mv.kind, MoveKind::Wait);
    }

    #[test]
    fn free_road_step_matches_hand_evaluation() {
        let net = line_net(100.0, 1);
        let map = net.build_lane_map(None).unwrap();
        let rs = routes();
        let cfg = DynamicsConfig::default();
        let view = WorldView { net: &net, map: &map, routes: &rs, now: 0.0, step: 0 };
        let v = on_road(0, 0, 0.0, 10.0, Some(1));
        map.set(0, 10);
        let plan = step_vehicle(&v, &view, &cfg).unwrap();
        // v = v0 = 10: free term is zero, so accel = 0 and x = 5
        let free = cfg.car.a * (1.0 - (10.0f64 / 10.0).powi(4));
        assert_eq!(plan.primary.mv.accel, free);
        assert!((plan.primary.mv.offset_m - (5.0 + 0.5 * free * 0.25)).abs() < 1e-12);
        assert!(!plan.contested);

        // below the limit the free term is positive
        let slow = on_road(0, 0, 0.0, 6.0, Some(1));
        let plan = step_vehicle(&slow, &view, &cfg).unwrap();
        let free = cfg.car.a * (1.0 - (0.6f64).powi(4));
        assert!((plan.primary.mv.accel - free).abs() < 1e-12);
        assert!((plan.primary.mv.offset_m - (3.0 + 0.5 * free * 0.25)).abs() < 1e-12);
        assert!((plan.primary.mv.speed - (6.0 + free * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn never_moves_onto_leader_cell() {
        let net = line_net(100.0, 1);
        let map = net.build_lane_map(None).unwrap();
        let rs = routes();
        let cfg = DynamicsConfig::default();
        let view = WorldView { net: &net, map: &map, routes: &rs, now: 0.0, step: 0 };
        map.set(12, 0);
        let v = on_road(0, 0, 10.0, 10.0, Some(1));
        let plan = step_vehicle(&v, &view, &cfg).unwrap();
        assert!(plan.primary.mv.offset_m < 12.0);
        assert!(plan.primary.mv.offset_m >= 10.0);
    }

    #[test]
    fn stopped_leader_follower_keeps_its_distance() {
        let net = line_net(200.0, 1);
        let mut cur = net.build_lane_map(None).unwrap();
        let mut next = net.build_lane_map(None).unwrap();
        let rs = routes();
        let cfg = DynamicsConfig { car: IdmParams { s0: 2.0, ..IdmParams::default() }, ..Default::default() };
        let leader_cell = 105;
        let mut v = on_road(0, 0, 100.0, 0.0, Some(1));
        let mut min_gap = f64::INFINITY;
        let mut gaps = Vec::new();
        for step in 0..400 {
            cur.set(leader_cell, 0);
            cur.set(v.cell(), encode_speed(v.speed));
            let view = WorldView { net: &net, map: &cur, routes: &rs, now: step as f64 * 0.5, step };
            let plan = step_vehicle(&v, &view, &cfg).unwrap();
            next.clear();
            next.set(leader_cell, 0);
            let mv = commit(&plan, &next).unwrap();
            v.apply(&mv, &rs[0], &net, 0.0).unwrap();
            let gap = leader_cell as f64 - v.cell() as f64;
            assert!(gap >= 1.0);
            min_gap = min_gap.min(gap);
            gaps.push(gap);
            std::mem::swap(&mut cur, &mut next);
            cur.clear();
        }
        assert!(v.speed < 1e-6, "speed {}", v.speed);
        assert!(min_gap >= cfg.car.s0 - 1.0);
        // the gap only ever shrinks
        assert!(gaps.windows(2).all(|w| w[1] <= w[0]));
        let _ = FREE_CELL;
    }

    #[test]
    fn edge_end_claims_next_first_cell_or_waits() {
        let net = line_net(20.0, 1);
        let map = net.build_lane_map(None).unwrap();
        let rs = routes();
        let cfg = DynamicsConfig::default();
        let view = WorldView { net: &net, map: &map, routes: &rs, now: 0.0, step: 0 };
        let v = on_road(0, 0, 17.0, 10.0, Some(1));
        let plan = step_vehicle(&v, &view, &cfg).unwrap();
        assert!(plan.contested);
        assert_eq!(plan.primary.mv.kind, MoveKind::EnterNext);
        assert_eq!(plan.primary.cell, Some(20));
        let fb = plan.fallback.unwrap();
        assert_eq!(fb.mv.offset_m, 19.0);
        assert_eq!(fb.mv.speed, 0.0);

        map.set(20, 0);
        let plan = step_vehicle(&v, &view, &cfg).unwrap();
        assert_eq!(plan.primary.mv.kind, MoveKind::Stay);
        assert_eq!(plan.primary.cell, Some(19));
    }

    #[test]
    fn last_edge_finishes_without_claim() {
        let net = line_net(20.0, 1);
        let map = net.build_lane_map(None).unwrap();
        let rs = routes();
        let view = WorldView { net: &net, map: &map, routes: &rs, now: 0.0, step: 0 };
        let v = on_road(0, 1, 18.0, 10.0, None);
        let plan = step_vehicle(&v, &view, &DynamicsConfig::default()).unwrap();
        assert_eq!(plan.primary.mv.kind, MoveKind::Finish);
        assert_eq!(plan.primary.cell, None);
    }

    #[test]
    fn draws_are_keyed_not_sequential() {
        let g = GapParams::default();
        let a = lane_change_draws(7, 3, 100, &g);
        let b = lane_change_draws(7, 3, 100, &g);
        assert_eq!(a, b);
        assert_ne!(a, lane_change_draws(7, 3, 101, &g));
        assert_ne!(a, lane_change_draws(7, 4, 100, &g));
        assert!((0.0..1.0).contains(&a.u));
    }

    #[test]
    fn turn_lanes() {
        // plus-shaped junction at node 0 with two-lane approaches
        let net = parse_network(
            "node,0,0,0,0\nnode,1,-50,0,0\nnode,2,0,50,0\nnode,3,0,-50,0\nnode,4,50,0,0\n\
             edge,0,1,0,50,2,10\nedge,1,0,2,50,2,10\nedge,2,0,3,50,2,10\nedge,3,0,4,50,2,10\nedge,4,0,1,50,2,10\n",
        )
        .unwrap();
        assert_eq!(required_lane(&net, EdgeId(0), EdgeId(1)), Some(1)); // left
        assert_eq!(required_lane(&net, EdgeId(0), EdgeId(2)), Some(0)); // right
        assert_eq!(required_lane(&net, EdgeId(0), EdgeId(3)), None); // straight
        assert_eq!(required_lane(&net, EdgeId(0), EdgeId(4)), Some(1)); // U-turn
    }

    #[test]
    fn signal_alternates() {
        let net = parse_network(
            "node,0,0,0,1\nnode,1,-50,0,0\nnode,2,0,50,0\n\
             edge,0,1,0,50,1,10\nedge,1,2,0,50,1,10\n",
        )
        .unwrap();
        assert!(signal_allows(&net, NodeId(0), EdgeId(0), 0.0, 60.0));
        assert!(!signal_allows(&net, NodeId(0), EdgeId(1), 0.0, 60.0));
        assert!(!signal_allows(&net, NodeId(0), EdgeId(0), 30.0, 60.0));
        assert!(signal_allows(&net, NodeId(0), EdgeId(1), 30.0, 60.0));
        assert!(signal_allows(&net, NodeId(1), EdgeId(0), 30.0, 60.0));
    }
}
