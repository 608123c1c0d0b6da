/// Counting Bloom filter over (bank, row) keys.
#[derive(Debug, Clone)]
pub struct CountingBloomFilter {
    counters: Vec<u32>,
    hashes: usize,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl CountingBloomFilter {
    pub fn new(size: usize, hashes: usize) -> Self {
        assert!(size > 0 && hashes > 0);
        Self {
            counters: vec![0; size],
            hashes,
        }
    }

    fn slots(&self, key: u64) -> impl Iterator<Item = usize> + '_ {
        let h1 = mix(key);
        let h2 = mix(h1) | 1;
        let m = self.counters.len() as u64;
        (0..self.hashes as u64).map(move |i| (h1.wrapping_add(i.wrapping_mul(h2)) % m) as usize)
    }

    pub fn insert(&mut self, key: u64) {
        let slots: Vec<usize> = self.slots(key).collect();
        for s in slots {
            self.counters[s] = self.counters[s].saturating_add(1);
        }
    }

    /// Count estimate; never below the true number of insertions of `key`.
    pub fn estimate(&self, key: u64) -> u32 {
        self.slots(key).map(|s| self.counters[s]).min().unwrap_or(0)
    }

    pub fn clear(&mut self) {
        self.counters.fill(0);
    }
}
