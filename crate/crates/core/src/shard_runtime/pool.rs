use crate::dynamics::VehicleState;
use std::collections::HashMap;

/// Shard-local vehicles. Removal swaps the last entry into the hole, so
/// positions are not stable; trip ids are.
#[derive(Debug, Clone, Default)]
pub struct VehiclePool {
    vehicles: Vec<VehicleState>,
    index: HashMap<u64, usize>,
}

impl VehiclePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_vec(vehicles: Vec<VehicleState>) -> Self {
        let index = vehicles.iter().enumerate().map(|(i, v)| (v.trip, i)).collect();
        Self { vehicles, index }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }

    pub fn push(&mut self, v: VehicleState) {
        self.index.insert(v.trip, self.vehicles.len());
        self.vehicles.push(v);
    }

    pub fn position(&self, trip: u64) -> Option<usize> {
        self.index.get(&trip).copied()
    }

    pub fn get(&self, pos: usize) -> &VehicleState {
        &self.vehicles[pos]
    }

    /// Replaces the vehicle at `pos`; the trip id must not change.
    pub fn replace(&mut self, pos: usize, v: VehicleState) {
        debug_assert_eq!(self.vehicles[pos].trip, v.trip);
        self.vehicles[pos] = v;
    }

    pub fn as_slice(&self) -> &[VehicleState] {
        &self.vehicles
    }

    /// Mutable access that cannot change trip ids' positions.
    pub fn as_mut_slice(&mut self) -> &mut [VehicleState] {
        &mut self.vehicles
    }

    pub fn iter(&self) -> std::slice::Iter<'_, VehicleState> {
        self.vehicles.iter()
    }

    /// Removes `positions` in descending order, each by swap-with-last.
    /// Duplicates are ignored. Returns the removed vehicles.
    pub fn remove_positions(&mut self, positions: &mut Vec<usize>) -> Vec<VehicleState> {
        positions.sort_unstable_by(|a, b| b.cmp(a));
        positions.dedup();
        let mut out = Vec::with_capacity(positions.len());
        for &p in positions.iter() {
            let v = self.vehicles.swap_remove(p);
            self.index.remove(&v.trip);
            if p < self.vehicles.len() {
                self.index.insert(self.vehicles[p].trip, p);
            }
            out.push(v);
        }
        out
    }

    pub fn into_vec(self) -> Vec<VehicleState> {
        self.vehicles
    }
}
