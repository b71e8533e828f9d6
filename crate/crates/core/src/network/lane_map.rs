use super::{EdgeId, RoadNetwork};
use std::sync::atomic::{AtomicU8, Ordering};

/// Byte value of an unoccupied cell.
pub const FREE_CELL: u8 = 255;

/// Highest speed byte an occupant can carry.
pub const MAX_SPEED_BYTE: u8 = 254;

/// Speed projected onto a cell byte: `floor(min(v, 254))`, negatives as 0.
#[inline]
pub fn encode_speed(speed: f64) -> u8 {
    if speed.is_nan() || speed <= 0.0 {
        0
    } else {
        speed.min(MAX_SPEED_BYTE as f64).floor() as u8
    }
}

#[inline]
pub fn decode_speed(byte: u8) -> f64 {
    byte as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum Claim {
    #[error("speed byte 255 is reserved for free cells")]
    ReservedByte,
    #[error("cell index {0} outside the lane map")]
    OutOfRange(usize),
}

/// Location of one edge inside a lane map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LaneSpan {
    pub offset: usize,
    pub cells: usize,
    pub lanes: u8,
}

impl LaneSpan {
    #[inline]
    pub fn index(&self, lane: u8, cell: usize) -> usize {
        debug_assert!(lane < self.lanes && cell < self.cells);
        self.offset + lane as usize * self.cells + cell
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.cells * self.lanes as usize
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat byte image of a set of lanes, one byte per meter.
///
/// Cells are atomics so that movers can claim them concurrently; every
/// other access is a relaxed load or store; the engine orders phases with
/// barriers.
#[derive(Debug)]
pub struct LaneMap {
    cells: Vec<AtomicU8>,
    spans: Vec<Option<LaneSpan>>,
}

impl Clone for LaneMap {
    fn clone(&self) -> Self {
        Self {
            cells: self.cells.iter().map(|c| AtomicU8::new(c.load(Ordering::Relaxed))).collect(),
            spans: self.spans.clone(),
        }
    }
}

impl LaneMap {
    /// Lays out `edges` contiguously in iteration order, every cell free.
    /// Edges not listed have no span in this map.
    pub fn for_edges(net: &RoadNetwork, edges: impl IntoIterator<Item = EdgeId>) -> Self {
        let mut spans = vec![None; net.edge_count()];
        let mut offset = 0;
        for id in edges {
            let e = net.edge(id);
            let span = LaneSpan { offset, cells: e.cells(), lanes: e.lanes };
            offset += span.len();
            spans[id.idx()] = Some(span);
        }
        let cells = (0..offset).map(|_| AtomicU8::new(FREE_CELL)).collect();
        Self { cells, spans }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn span(&self, edge: EdgeId) -> Option<LaneSpan> {
        self.spans.get(edge.idx()).copied().flatten()
    }

    pub fn contains_edge(&self, edge: EdgeId) -> bool {
        self.span(edge).is_some()
    }

    #[inline]
    pub fn index(&self, edge: EdgeId, lane: u8, cell: usize) -> Option<usize> {
        let span = self.span(edge)?;
        (lane < span.lanes && cell < span.cells).then(|| span.index(lane, cell))
    }

    #[inline]
    pub fn get(&self, index: usize) -> u8 {
        self.cells[index].load(Ordering::Relaxed)
    }

    #[inline]
    pub fn is_free(&self, index: usize) -> bool {
        self.get(index) == FREE_CELL
    }

    #[inline]
    pub fn set(&self, index: usize, value: u8) {
        self.cells[index].store(value, Ordering::Relaxed);
    }

    /// Writes `speed_byte` into a free cell. Exactly one of any set of
    /// concurrent claimants on the same free cell gets `Ok(true)`.
    pub fn claim_cell(&self, index: usize, speed_byte: u8) -> Result<bool, Claim> {
        if speed_byte == FREE_CELL {
            return Err(Claim::ReservedByte);
        }
        let cell = self.cells.get(index).ok_or(Claim::OutOfRange(index))?;
        Ok(cell
            .compare_exchange(FREE_CELL, speed_byte, Ordering::AcqRel, Ordering::Relaxed)
            .is_ok())
    }

    /// Nearest occupied cell strictly ahead of `pos` on `lane`, at most
    /// `horizon` cells away, as (distance, decoded speed). Stops at the edge end.
    pub fn probe_ahead(
        &self,
        span: LaneSpan,
        lane: u8,
        pos: usize,
        horizon: usize,
    ) -> Option<(usize, f64)> {
        let base = span.index(lane, 0);
        let last = span.cells.min(pos.saturating_add(horizon).saturating_add(1));
        (pos + 1..last).find_map(|c| {
            let b = self.get(base + c);
            (b != FREE_CELL).then(|| (c - pos, decode_speed(b)))
        })
    }

    /// Nearest occupied cell strictly behind `pos` on `lane`, as (distance, speed).
    pub fn probe_behind(&self, span: LaneSpan, lane: u8, pos: usize) -> Option<(usize, f64)> {
        let base = span.index(lane, 0);
        (0..pos).rev().find_map(|c| {
            let b = self.get(base + c);
            (b != FREE_CELL).then(|| (pos - c, decode_speed(b)))
        })
    }

    /// Resets every cell to free.
    pub fn clear(&mut self) {
        for c in &mut self.cells {
            *c.get_mut() = FREE_CELL;
        }
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|c| c.load(Ordering::Relaxed) != FREE_CELL).count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.cells.iter().map(|c| c.load(Ordering::Relaxed)).collect()
    }

    /// Overwrites every cell; `bytes` must match the map length.
    pub fn load_bytes(&mut self, bytes: &[u8]) -> bool {
        if bytes.len() != self.cells.len() {
            return false;
        }
        for (c, &b) in self.cells.iter_mut().zip(bytes) {
            *c.get_mut() = b;
        }
        true
    }

    /// Copy of one edge's bytes, all lanes.
    pub fn edge_bytes(&self, edge: EdgeId) -> Option<Vec<u8>> {
        let span = self.span(edge)?;
        Some((span.offset..span.offset + span.len()).map(|i| self.get(i)).collect())
    }

    /// Overwrites one edge's bytes.
    pub fn write_edge_bytes(&self, edge: EdgeId, bytes: &[u8]) {
        let span = self.span(edge).expect("edge not in lane map");
        assert_eq!(bytes.len(), span.len());
        for (i, &b) in bytes.iter().enumerate() {
            self.set(span.offset + i, b);
        }
    }
}
