use serde::{Deserialize, Serialize};

use super::Cycle;

/// Largest damage count ever observed on any row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DamagePeak {
    pub bank: usize,
    pub row: u32,
    pub count: u32,
    pub cycle: Cycle,
}

/// Ground-truth read-disturbance bookkeeping.
///
/// `damage[v]` counts activations of rows within the blast radius of `v`
/// since `v` was last refreshed. The oracle only observes; it never
/// prevents anything.
#[derive(Debug, Clone)]
pub struct SafetyOracle {
    rows_per_bank: u32,
    blast_radius: u32,
    damage: Vec<u32>,
    peak: DamagePeak,
    // Last REF time of each refresh block, per rank.
    block_last_ref: Vec<Vec<Cycle>>,
    t_refw: Cycle,
    liveness_violations: u64,
}

impl SafetyOracle {
    pub fn new(
        banks: usize,
        ranks: usize,
        rows_per_bank: u32,
        blocks_per_bank: u32,
        blast_radius: u32,
        t_refw: Cycle,
    ) -> Self {
        Self {
            rows_per_bank,
            blast_radius,
            damage: vec![0; banks * rows_per_bank as usize],
            peak: DamagePeak::default(),
            block_last_ref: vec![vec![0; blocks_per_bank as usize]; ranks],
            t_refw,
            liveness_violations: 0,
        }
    }

    pub fn blast_radius(&self) -> u32 {
        self.blast_radius
    }

    fn idx(&self, bank: usize, row: u32) -> usize {
        bank * self.rows_per_bank as usize + row as usize
    }

    /// Rows disturbed by activating `row`.
    pub fn neighbours(&self, row: u32) -> impl Iterator<Item = u32> + '_ {
        let rows = self.rows_per_bank;
        (1..=self.blast_radius).flat_map(move |k| {
            let below = row.checked_sub(k);
            let above = row.checked_add(k).filter(|&r| r < rows);
            below.into_iter().chain(above)
        })
    }

    pub fn on_activate(&mut self, bank: usize, row: u32, now: Cycle) {
        let rows = self.rows_per_bank;
        for k in 1..=self.blast_radius {
            for victim in [row.checked_sub(k), row.checked_add(k).filter(|&r| r < rows)]
                .into_iter()
                .flatten()
            {
                let i = self.idx(bank, victim);
                self.damage[i] += 1;
                if self.damage[i] > self.peak.count {
                    self.peak = DamagePeak {
                        bank,
                        row: victim,
                        count: self.damage[i],
                        cycle: now,
                    };
                }
            }
        }
    }

    pub fn refresh_row(&mut self, bank: usize, row: u32) {
        let i = self.idx(bank, row);
        self.damage[i] = 0;
    }

    /// Applies a periodic REF of block `block` to every bank in `banks`.
    pub fn on_ref(
        &mut self,
        rank: usize,
        banks: std::ops::Range<usize>,
        block: u32,
        rows_per_block: u32,
        now: Cycle,
    ) {
        let first = block * rows_per_block;
        for bank in banks {
            let start = self.idx(bank, first);
            self.damage[start..start + rows_per_block as usize].fill(0);
        }
        let last = &mut self.block_last_ref[rank][block as usize];
        if now - *last > self.t_refw {
            self.liveness_violations += 1;
        }
        *last = now;
    }

    pub fn damage(&self, bank: usize, row: u32) -> u32 {
        self.damage[self.idx(bank, row)]
    }

    /// Row with the largest current damage count, as (bank, row, count).
    pub fn max_damage(&self) -> (usize, u32, u32) {
        let (i, &count) = self
            .damage
            .iter()
            .enumerate()
            .max_by_key(|&(i, &c)| (c, std::cmp::Reverse(i)))
            .expect("oracle tracks at least one row");
        let rows = self.rows_per_bank as usize;
        (i / rows, (i % rows) as u32, count)
    }

    pub fn peak(&self) -> DamagePeak {
        self.peak
    }

    /// REF gaps longer than tREFW observed so far, plus blocks whose last
    /// REF is already older than tREFW at `now`.
    pub fn liveness_violations(&self, now: Cycle) -> u64 {
        let stale = self
            .block_last_ref
            .iter()
            .flatten()
            .filter(|&&t| now.saturating_sub(t) > self.t_refw)
            .count() as u64;
        self.liveness_violations + stale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle() -> SafetyOracle {
        SafetyOracle::new(2, 1, 1024, 128, 1, 1_000_000)
    }

    #[test]
    fn fresh_device_has_zero_damage() {
        assert_eq!(oracle().max_damage().2, 0);
    }

    #[test]
    fn activation_damages_both_neighbours() {
        let mut o = oracle();
        o.on_activate(0, 100, 5);
        assert_eq!(o.damage(0, 99), 1);
        assert_eq!(o.damage(0, 101), 1);
        assert_eq!(o.damage(0, 100), 0);
        assert_eq!(o.damage(1, 99), 0);
    }

    #[test]
    fn five_hundred_hammers() {
        let mut o = oracle();
        for t in 0..500 {
            o.on_activate(1, 7, t);
        }
        assert_eq!(o.damage(1, 6), 500);
        assert_eq!(o.damage(1, 8), 500);
        let (bank, row, count) = o.max_damage();
        assert_eq!((bank, count), (1, 500));
        assert!(row == 6 || row == 8);
        assert_eq!(o.peak().count, 500);
    }

    #[test]
    fn edge_rows_have_one_neighbour() {
        let mut o = oracle();
        o.on_activate(0, 0, 0);
        o.on_activate(0, 1023, 0);
        assert_eq!(o.damage(0, 1), 1);
        assert_eq!(o.damage(0, 1022), 1);
        assert_eq!(o.neighbours(0).collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn ref_resets_block_and_tracks_liveness() {
        let mut o = oracle();
        for r in 0..16 {
            o.on_activate(0, r, 0);
            o.on_activate(1, r, 0);
        }
        o.on_ref(0, 0..2, 0, 8, 10);
        for r in 0..8 {
            assert_eq!(o.damage(0, r), 0);
            assert_eq!(o.damage(1, r), 0);
        }
        assert!(o.damage(0, 8) > 0);
        assert_eq!(o.liveness_violations(10), 0);
        // Block 0 refreshed again too late.
        o.on_ref(0, 0..2, 0, 8, 1_000_011);
        assert_eq!(o.liveness_violations(1_000_011), 1 + 127);
    }
}
