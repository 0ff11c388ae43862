//! Long-term gap-sampled FIFO memory plus a short-term previous-frame slot.
//!
//! The first frame is pinned and never evicted. Long-term writes happen on
//! positive multiples of the gap `G`; once more than `L` long-term entries are
//! held the oldest is dropped.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::propagation::config::GPM_SCALES;
use crate::tensor::Tensor;

/// Anything the bank can hold.
pub trait MemorySlot {
    fn frame_index(&self) -> usize;
}

impl MemorySlot for usize {
    fn frame_index(&self) -> usize {
        *self
    }
}

/// Whether frame `frame_index` is written to long-term memory under gap `gap`.
pub fn should_store(frame_index: usize, gap: usize) -> bool {
    gap > 0 && frame_index >= 1 && frame_index.is_multiple_of(gap)
}

#[derive(Debug, Clone)]
pub struct MemoryBank<E> {
    capacity: usize,
    initial: Option<E>,
    long_term: VecDeque<E>,
    short_term: Option<E>,
    last_store_index: Option<usize>,
    evictions: usize,
    stores: usize,
}

impl<E: MemorySlot> MemoryBank<E> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            initial: None,
            long_term: VecDeque::with_capacity(capacity + 1),
            short_term: None,
            last_store_index: None,
            evictions: 0,
            stores: 0,
        }
    }

    /// Pins the first-frame entry, clearing everything else.
    pub fn initialize(&mut self, entry: E) {
        self.last_store_index = Some(entry.frame_index());
        self.initial = Some(entry);
        self.long_term.clear();
        self.short_term = None;
        self.evictions = 0;
        self.stores = 0;
    }

    pub fn is_initialized(&self) -> bool {
        self.initial.is_some()
    }

    /// Appends to long-term memory, evicting the oldest long-term entry when over capacity.
    /// Returns the evicted entry, if any.
    pub fn store(&mut self, entry: E) -> Result<Option<E>> {
        let idx = entry.frame_index();
        if let Some(last) = self.last_store_index {
            if idx <= last {
                return Err(Error::OutOfOrder { got: idx, last });
            }
        }
        self.long_term.push_back(entry);
        self.last_store_index = Some(idx);
        self.stores += 1;
        if self.long_term.len() > self.capacity {
            self.evictions += 1;
            return Ok(self.long_term.pop_front());
        }
        Ok(None)
    }

    pub fn update_short_term(&mut self, entry: E) {
        self.short_term = Some(entry);
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn initial(&self) -> Option<&E> {
        self.initial.as_ref()
    }

    pub fn long_term(&self) -> impl Iterator<Item = &E> {
        self.long_term.iter()
    }

    pub fn long_term_len(&self) -> usize {
        self.long_term.len()
    }

    pub fn short_term(&self) -> Option<&E> {
        self.short_term.as_ref()
    }

    pub fn last_store_index(&self) -> Option<usize> {
        self.last_store_index
    }

    /// Long-term writes since initialisation.
    pub fn stores(&self) -> usize {
        self.stores
    }

    pub fn evictions(&self) -> usize {
        self.evictions
    }

    /// Distinct entries in read order: initial, long-term oldest first, then
    /// short-term unless its frame is already present.
    pub fn entries(&self) -> Result<Vec<&E>> {
        let initial = self
            .initial
            .as_ref()
            .ok_or(Error::Empty("memory bank is not initialized"))?;
        let mut out: Vec<&E> = Vec::with_capacity(self.long_term.len() + 2);
        out.push(initial);
        out.extend(self.long_term.iter());
        if let Some(s) = &self.short_term {
            if !out.iter().any(|e| e.frame_index() == s.frame_index()) {
                out.push(s);
            }
        }
        Ok(out)
    }

    pub fn frame_indices(&self) -> Result<Vec<usize>> {
        Ok(self.entries()?.iter().map(|e| e.frame_index()).collect())
    }
}

/// Per-scale memory tensors of one frame, each `[tokens, channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryLevel {
    pub scale: usize,
    pub keys: Tensor,
    pub vis_values: Tensor,
    pub id_values: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub frame_index: usize,
    /// One level per propagation scale.
    pub levels: Vec<MemoryLevel>,
}

impl MemorySlot for MemoryEntry {
    fn frame_index(&self) -> usize {
        self.frame_index
    }
}

impl MemoryEntry {
    pub fn level(&self, scale: usize) -> Option<&MemoryLevel> {
        self.levels.iter().find(|l| l.scale == scale)
    }
}

/// Concatenated memory read by the propagation layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryView {
    pub frame_indices: Vec<usize>,
    pub levels: Vec<MemoryLevel>,
}

impl MemoryView {
    pub fn from_entries(entries: &[&MemoryEntry]) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("memory view"));
        }
        let mut levels = Vec::with_capacity(GPM_SCALES.len());
        for &scale in &GPM_SCALES {
            let parts: Vec<&MemoryLevel> = entries
                .iter()
                .map(|e| {
                    e.level(scale).ok_or_else(|| {
                        Error::Shape(format!("memory entry {} lacks scale {scale}", e.frame_index))
                    })
                })
                .collect::<Result<_>>()?;
            let cat = |f: fn(&MemoryLevel) -> &Tensor| {
                Tensor::concat_rows(&parts.iter().map(|p| f(p)).collect::<Vec<_>>())
            };
            levels.push(MemoryLevel {
                scale,
                keys: cat(|l| &l.keys)?,
                vis_values: cat(|l| &l.vis_values)?,
                id_values: cat(|l| &l.id_values)?,
            });
        }
        Ok(Self {
            frame_indices: entries.iter().map(|e| e.frame_index).collect(),
            levels,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.frame_indices.is_empty()
    }

    pub fn level(&self, scale: usize) -> &MemoryLevel {
        self.levels
            .iter()
            .find(|l| l.scale == scale)
            .unwrap_or_else(|| panic!("memory view has no scale {scale}"))
    }
}

impl MemoryBank<MemoryEntry> {
    pub fn gather(&self) -> Result<MemoryView> {
        MemoryView::from_entries(&self.entries()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Drives a bank through frames `1..=last` the way the tracker does.
    fn run(gap: usize, capacity: usize, last: usize) -> MemoryBank<usize> {
        let mut bank = MemoryBank::new(capacity);
        bank.initialize(0);
        for t in 1..=last {
            if should_store(t, gap) {
                bank.store(t).unwrap();
            }
            bank.update_short_term(t);
        }
        bank
    }

    #[test]
    fn store_schedule() {
        assert!(should_store(50, 50));
        assert!(!should_store(49, 50));
        assert!((1..200).all(|t| should_store(t, 1)));
        assert!(!should_store(0, 50));
    }

    #[test]
    fn fifo_at_frame_450() {
        // oracle: simulate the schedule by hand
        let mut expected: Vec<usize> = (1..=450).filter(|t| t % 50 == 0).collect();
        while expected.len() > 8 {
            expected.remove(0);
        }
        assert_eq!(expected.first(), Some(&100));
        let bank = run(50, 8, 450);
        assert_eq!(bank.long_term().copied().collect::<Vec<_>>(), expected);
        assert_eq!(bank.initial(), Some(&0));
        assert_eq!(bank.evictions(), 1);
    }

    #[test]
    fn first_store() {
        let mut bank = MemoryBank::new(8);
        bank.initialize(0usize);
        assert_eq!(bank.store(50).unwrap(), None);
        assert_eq!(bank.long_term_len(), 1);
    }

    #[test]
    fn out_of_order_rejected() {
        let mut bank = MemoryBank::new(2);
        bank.initialize(0usize);
        bank.store(10).unwrap();
        assert!(matches!(bank.store(10), Err(Error::OutOfOrder { got: 10, last: 10 })));
        assert!(matches!(bank.store(5), Err(Error::OutOfOrder { .. })));
        assert!(bank.store(0).is_err());
    }

    #[test]
    fn long_run_bounded() {
        let mut bank = MemoryBank::new(8);
        bank.initialize(0usize);
        for t in 1..10_000 {
            if should_store(t, 50) {
                bank.store(t).unwrap();
            }
            bank.update_short_term(t);
            assert!(bank.long_term_len() <= 8);
            assert!(bank.entries().unwrap().len() <= 8 + 2);
            assert_eq!(bank.initial(), Some(&0));
        }
    }

    #[test]
    fn short_term_replacement() {
        let bank = run(50, 8, 7);
        assert_eq!(bank.short_term(), Some(&7));
        let mut b = bank.clone();
        b.update_short_term(8);
        b.update_short_term(9);
        assert_eq!(b.short_term(), Some(&9));
        let shorts = b.entries().unwrap().iter().filter(|&&&e| e == 9).count();
        assert_eq!(shorts, 1);
    }

    #[test]
    fn gather_order_and_dedup() {
        let mut bank = MemoryBank::new(8);
        assert!(bank.entries().is_err());
        bank.initialize(0usize);
        assert_eq!(bank.frame_indices().unwrap(), vec![0]);
        // state while predicting frame 51: short-term holds frame 50, which was also stored
        let bank = run(50, 8, 50);
        assert_eq!(bank.frame_indices().unwrap(), vec![0, 50]);
        let bank = run(50, 8, 52);
        assert_eq!(bank.frame_indices().unwrap(), vec![0, 50, 52]);
    }

    #[test]
    fn gather_concatenates_rows() {
        let entry = |i: usize, rows: usize| MemoryEntry {
            frame_index: i,
            levels: GPM_SCALES
                .iter()
                .map(|&scale| MemoryLevel {
                    scale,
                    keys: Tensor::zeros(vec![rows, 3]),
                    vis_values: Tensor::zeros(vec![rows, 3]),
                    id_values: Tensor::zeros(vec![rows, 2]),
                })
                .collect(),
        };
        let mut bank = MemoryBank::new(2);
        bank.initialize(entry(0, 4));
        bank.store(entry(5, 4)).unwrap();
        bank.update_short_term(entry(6, 4));
        let view = bank.gather().unwrap();
        assert_eq!(view.frame_indices, vec![0, 5, 6]);
        assert_eq!(view.level(16).keys.rows(), 12);
        assert_eq!(view.level(8).id_values.shape(), &[12, 2]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn retains_most_recent_multiples(gap in 1usize..40, cap in 1usize..10, last in 1usize..600) {
                let bank = run(gap, cap, last);
                let multiples: Vec<usize> = (1..=last).filter(|t| t % gap == 0).collect();
                let keep = &multiples[multiples.len().saturating_sub(cap)..];
                prop_assert_eq!(bank.long_term().copied().collect::<Vec<_>>(), keep.to_vec());
                prop_assert_eq!(bank.initial(), Some(&0));
                let idx = bank.frame_indices().unwrap();
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
