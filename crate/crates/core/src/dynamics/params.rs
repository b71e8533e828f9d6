use super::DynamicsError;
use crate::demand::VehicleType;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Maximum acceleration, m/s².
    pub a: f64,
    /// Comfortable braking, m/s².
    pub b: f64,
    /// Acceleration exponent.
    pub delta: f64,
    /// Minimum standstill spacing, m.
    pub s0: f64,
    /// Desired time headway, s.
    pub headway: f64,
    /// Braking floor as a multiple of `b`.
    pub emergency_factor: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self { a: 1.5, b: 2.0, delta: 4.0, s0: 2.0, headway: 1.5, emergency_factor: 2.0 }
    }
}

impl IdmParams {
    pub fn truck() -> Self {
        Self { a: 0.8, b: 1.5, headway: 2.0, s0: 3.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let ok = self.a > 0.0
            && self.b > 0.0
            && self.delta > 0.0
            && self.s0 >= 0.0
            && self.headway >= 0.0
            && self.emergency_factor >= 1.0;
        ok.then_some(())
            .ok_or_else(|| DynamicsError::BadParameter(format!("IDM parameters {self:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneChangeParams {
    /// Distance before the exit at which mandatory changes start, m.
    pub x0: f64,
}

impl Default for LaneChangeParams {
    fn default() -> Self {
        Self { x0: 60.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapParams {
    pub g_a: f64,
    pub g_b: f64,
    pub alpha_a: f64,
    pub alpha_b: f64,
    pub alpha_i: f64,
    pub sigma_a: f64,
    pub sigma_b: f64,
}

impl Default for GapParams {
    fn default() -> Self {
        Self { g_a: 2.0, g_b: 3.0, alpha_a: 0.3, alpha_b: 0.5, alpha_i: 0.2, sigma_a: 0.5, sigma_b: 0.5 }
    }
}

impl GapParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let ok = self.g_a >= 0.0
            && self.g_b >= 0.0
            && self.alpha_a >= 0.0
            && self.alpha_b >= 0.0
            && self.alpha_i >= 0.0
            && self.sigma_a >= 0.0
            && self.sigma_b >= 0.0;
        ok.then_some(())
            .ok_or_else(|| DynamicsError::BadParameter(format!("gap parameters {self:?}")))
    }
}

/// Everything a single vehicle update needs besides the world snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    /// Simulation timestep, s.
    pub dt: f64,
    pub car: IdmParams,
    pub truck: IdmParams,
    pub lane_change: LaneChangeParams,
    pub gap: GapParams,
    /// Fixed two-phase cycle for signalized nodes, s.
    pub signal_cycle_s: f64,
    pub seed: u64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            dt: 0.5,
            car: IdmParams::default(),
            truck: IdmParams::truck(),
            lane_change: LaneChangeParams::default(),
            gap: GapParams::default(),
            signal_cycle_s: 60.0,
            seed: 0,
        }
    }
}

impl DynamicsConfig {
    #[inline]
    pub fn idm(&self, kind: VehicleType) -> &IdmParams {
        match kind {
            VehicleType::Car => &self.car,
            VehicleType::Truck => &self.truck,
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(DynamicsError::BadParameter(format!("dt = {}", self.dt)));
        }
        if !(self.lane_change.x0 > 0.0) {
            return Err(DynamicsError::BadParameter(format!("x0 = {}", self.lane_change.x0)));
        }
        if !(self.signal_cycle_s > 0.0) {
            return Err(DynamicsError::BadParameter(format!("signal cycle = {}", self.signal_cycle_s)));
        }
        self.car.validate()?;
        self.truck.validate()?;
        self.gap.validate()
    }
}
