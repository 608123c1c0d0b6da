use std::collections::{BTreeSet, HashMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Entry {
    count: u64,
    // Estimated count at the last refresh of this row's victims.
    base: u64,
}

/// Misra-Gries frequent-item table over row indices.
///
/// Estimates never undercount: for every row, its true count since the last
/// reset is at most `estimate(row)`.
#[derive(Debug, Clone)]
pub struct MisraGries {
    capacity: usize,
    entries: HashMap<u32, Entry>,
    by_count: BTreeSet<(u64, u32)>,
    spill: u64,
}

impl MisraGries {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "Misra-Gries table needs at least one entry");
        Self {
            capacity,
            entries: HashMap::with_capacity(capacity),
            by_count: BTreeSet::new(),
            spill: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn spill(&self) -> u64 {
        self.spill
    }

    pub fn counter(&self, row: u32) -> Option<u64> {
        self.entries.get(&row).map(|e| e.count)
    }

    /// Upper bound on the true count of `row` since the last reset.
    pub fn estimate(&self, row: u32) -> u64 {
        self.counter(row).unwrap_or(self.spill)
    }

    /// Records one occurrence of `row` and returns its new counter and the
    /// counter value at its last refresh mark, if the row is tracked.
    pub fn observe(&mut self, row: u32) -> Option<(u64, u64)> {
        if let Some(e) = self.entries.get_mut(&row) {
            self.by_count.remove(&(e.count, row));
            e.count += 1;
            self.by_count.insert((e.count, row));
            return Some((e.count, e.base));
        }
        if self.entries.len() < self.capacity {
            return Some(self.insert(row, self.spill + 1));
        }
        let &(min_count, victim) = self.by_count.first().expect("table is full");
        if min_count == self.spill {
            self.by_count.remove(&(min_count, victim));
            self.entries.remove(&victim);
            Some(self.insert(row, self.spill + 1))
        } else {
            self.spill += 1;
            None
        }
    }

    fn insert(&mut self, row: u32, count: u64) -> (u64, u64) {
        self.entries.insert(row, Entry { count, base: 0 });
        self.by_count.insert((count, row));
        (count, 0)
    }

    /// Marks the current counter of `row` as refreshed.
    pub fn mark_refreshed(&mut self, row: u32) {
        if let Some(e) = self.entries.get_mut(&row) {
            e.base = e.count;
        }
    }

    pub fn reset(&mut self) {
        self.entries.clear();
        self.by_count.clear();
        self.spill = 0;
    }
}
