//! Per-vehicle update for one timestep: car following, mandatory lane
//! change with gap acceptance, and intersection entry.

mod params;
mod step;
mod vehicle;

pub use params::{DynamicsConfig, GapParams, IdmParams, LaneChangeParams};
pub use step::{
    commit, lane_change_draws, required_lane, signal_allows, step_vehicle, LaneChangeDraws,
    Move, MoveKind, StepPlan, WorldView,
};
pub use vehicle::{Phase, VehicleState};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicsError {
    #[error("nonpositive gap {gap} m to the leader of trip {trip}")]
    NonPositiveGap { trip: u64, gap: f64 },
    #[error("trip {trip}: route cursor exhausted on {edge}")]
    RouteExhausted { trip: u64, edge: crate::network::EdgeId },
    #[error("trip {trip}: {edge} is not present in this lane map")]
    MissingEdge { trip: u64, edge: crate::network::EdgeId },
    #[error("trip {trip}: every candidate cell was already claimed")]
    CellConflict { trip: u64 },
    #[error("bad parameter: {0}")]
    BadParameter(String),
}

/// Intelligent Driver Model acceleration.
///
/// `s` is the bumper gap to the leader and `dv = v - v_leader` the approach
/// rate. The result is clamped below at `-emergency_factor * b`.
pub fn idm_accel(v: f64, v0: f64, s: f64, dv: f64, p: &IdmParams) -> Result<f64, DynamicsError> {
    if !(s > 0.0) {
        return Err(DynamicsError::NonPositiveGap { trip: u64::MAX, gap: s });
    }
    let s_star = p.s0 + (v * p.headway + v * dv / (2.0 * (p.a * p.b).sqrt())).max(0.0);
    let raw = p.a * (1.0 - (v / v0).powf(p.delta) - (s_star / s).powi(2));
    Ok(raw.max(-p.emergency_factor * p.b))
}

/// Free-road term of the IDM: `a·(1 − (v/v0)^δ)`.
pub fn idm_free_accel(v: f64, v0: f64, p: &IdmParams) -> f64 {
    (p.a * (1.0 - (v / v0).powf(p.delta))).max(-p.emergency_factor * p.b)
}

/// Gap at which a follower at speed `v` behind an equal-speed leader is in
/// equilibrium: `(s0 + v·T) / sqrt(1 − (v/v0)^δ)`.
pub fn equilibrium_gap(v: f64, v0: f64, p: &IdmParams) -> f64 {
    (p.s0 + v * p.headway) / (1.0 - (v / v0).powf(p.delta)).sqrt()
}

/// Probability of starting a mandatory lane change `x` meters before the
/// exit: zero beyond `x0`, rising linearly to one at the exit.
pub fn mandatory_lc_probability(x: f64, p: &LaneChangeParams) -> f64 {
    ((p.x0 - x) / p.x0).clamp(0.0, 1.0)
}

/// Critical lead and lag gaps for a subject at `subject_speed`.
pub fn critical_gaps(
    subject_speed: f64,
    v_lead: f64,
    v_lag: f64,
    p: &GapParams,
    eps: (f64, f64),
) -> (f64, f64) {
    let lead = (p.g_a + p.alpha_a * v_lead - p.alpha_i * subject_speed + eps.0).max(0.0);
    let lag = (p.g_b + p.alpha_b * v_lag - p.alpha_i * subject_speed + eps.1).max(0.0);
    (lead, lag)
}

/// Accepts the target-lane slot iff both available gaps reach their critical gaps.
#[allow(clippy::too_many_arguments)]
pub fn gap_accept(
    subject: &VehicleState,
    lead_gap: f64,
    lag_gap: f64,
    v_lead: f64,
    v_lag: f64,
    p: &GapParams,
    eps: (f64, f64),
) -> bool {
    let (g_lead, g_lag) = critical_gaps(subject.speed, v_lead, v_lag, p, eps);
    lead_gap >= g_lead && lag_gap >= g_lag
}

/// Advances speed and position over `dt` under constant `accel`, stopping
/// at zero speed instead of reversing. Returns (distance, new speed).
pub fn integrate(v: f64, accel: f64, dt: f64) -> (f64, f64) {
    let v1 = v + accel * dt;
    if v1 < 0.0 {
        let dx = if accel < 0.0 { v * v / (-2.0 * accel) } else { 0.0 };
        (dx, 0.0)
    } else {
        (v * dt + 0.5 * accel * dt * dt, v1)
    }
}
