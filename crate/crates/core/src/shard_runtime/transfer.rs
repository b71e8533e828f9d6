use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

/// Append-only buffer filled concurrently during a superstep. Each append
/// claims a slot with one atomic increment; capacity is reserved up front
/// and the contents are drained once the buffer is sealed at the barrier.
#[derive(Debug, Default)]
pub struct TransferBuffer<T> {
    slots: Vec<OnceLock<T>>,
    cursor: AtomicUsize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("transfer buffer full ({capacity} slots)")]
pub struct BufferFull {
    pub capacity: usize,
}

impl<T> TransferBuffer<T> {
    pub fn new() -> Self {
        Self { slots: Vec::new(), cursor: AtomicUsize::new(0) }
    }

    /// Ensures room for `capacity` appends. Requires exclusive access.
    pub fn reserve(&mut self, capacity: usize) {
        if self.slots.len() < capacity {
            self.slots.resize_with(capacity, OnceLock::new);
        }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    /// Records appended so far.
    pub fn len(&self) -> usize {
        self.cursor.load(Ordering::Acquire).min(self.slots.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&self, item: T) -> Result<usize, BufferFull> {
        let slot = self.cursor.fetch_add(1, Ordering::AcqRel);
        match self.slots.get(slot) {
            Some(cell) => {
                if cell.set(item).is_err() {
                    unreachable!("slot {slot} claimed twice");
                }
                Ok(slot)
            }
            None => Err(BufferFull { capacity: self.slots.len() }),
        }
    }

    /// Takes every appended record in slot order and resets the cursor.
    pub fn drain(&mut self) -> Vec<T> {
        let n = self.len();
        *self.cursor.get_mut() = 0;
        self.slots[..n].iter_mut().map(|c| c.take().expect("appended slot is filled")).collect()
    }
}
