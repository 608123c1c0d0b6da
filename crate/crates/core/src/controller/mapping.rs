use serde::{Deserialize, Serialize};

use crate::dram::{DeviceGeometry, DramAddress};
use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Channel,
    Rank,
    BankGroup,
    Bank,
    Row,
    Column,
}

impl Field {
    const ALL: [Field; 6] = [
        Field::Channel,
        Field::Rank,
        Field::BankGroup,
        Field::Bank,
        Field::Row,
        Field::Column,
    ];

    fn get(self, a: &DramAddress) -> u32 {
        match self {
            Field::Channel => a.channel,
            Field::Rank => a.rank,
            Field::BankGroup => a.bankgroup,
            Field::Bank => a.bank,
            Field::Row => a.row,
            Field::Column => a.column,
        }
    }

    fn slot(self, a: &mut DramAddress) -> &mut u32 {
        match self {
            Field::Channel => &mut a.channel,
            Field::Rank => &mut a.rank,
            Field::BankGroup => &mut a.bankgroup,
            Field::Bank => &mut a.bank,
            Field::Row => &mut a.row,
            Field::Column => &mut a.column,
        }
    }

    fn extent(self, g: &DeviceGeometry) -> u32 {
        match self {
            Field::Channel => g.channels,
            Field::Rank => g.ranks_per_channel,
            Field::BankGroup => g.bankgroups_per_rank,
            Field::Bank => g.banks_per_bankgroup,
            Field::Row => g.rows_per_bank,
            Field::Column => g.columns_per_row,
        }
    }
}

/// A run of consecutive address bits assigned to one field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Slice {
    pub field: Field,
    pub bits: u32,
}

/// Bit-slice address mapping, listed from least to most significant bit
/// above the cache-line offset. Repeated fields fill from their low bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddressMapping {
    pub line_bytes: u64,
    pub slices: Vec<Slice>,
}

impl AddressMapping {
    /// Minimalist open-page layout: four consecutive lines share a row,
    /// the next groups rotate over bank groups, banks and ranks.
    pub fn mop(geometry: &DeviceGeometry) -> Self {
        let log2 = |v: u32| v.trailing_zeros();
        let col_bits = log2(geometry.columns_per_row);
        let low = col_bits.min(2);
        let slices = [
            (Field::Column, low),
            (Field::Channel, log2(geometry.channels)),
            (Field::BankGroup, log2(geometry.bankgroups_per_rank)),
            (Field::Bank, log2(geometry.banks_per_bankgroup)),
            (Field::Rank, log2(geometry.ranks_per_channel)),
            (Field::Column, col_bits - low),
            (Field::Row, log2(geometry.rows_per_bank)),
        ]
        .into_iter()
        .filter(|&(_, bits)| bits > 0)
        .map(|(field, bits)| Slice { field, bits })
        .collect();
        Self {
            line_bytes: geometry.bytes_per_column as u64,
            slices,
        }
    }

    pub fn validate(&self, geometry: &DeviceGeometry) -> Result<()> {
        if !self.line_bytes.is_power_of_two() {
            return Err(SimError::config("controller.mapping.line_bytes", "must be a power of two"));
        }
        for field in Field::ALL {
            let bits: u32 = self.slices.iter().filter(|s| s.field == field).map(|s| s.bits).sum();
            let extent = field.extent(geometry);
            if !extent.is_power_of_two() || 1u64 << bits != extent as u64 {
                return Err(SimError::config(
                    "controller.mapping.slices",
                    format!("{field:?} needs {extent} values but the layout maps {bits} bits"),
                ));
            }
        }
        if self.address_bits() > 63 {
            return Err(SimError::config("controller.mapping.slices", "layout exceeds 63 bits"));
        }
        Ok(())
    }

    fn offset_bits(&self) -> u32 {
        self.line_bytes.trailing_zeros()
    }

    pub fn address_bits(&self) -> u32 {
        self.offset_bits() + self.slices.iter().map(|s| s.bits).sum::<u32>()
    }

    /// Bytes covered by the mapping; higher address bits wrap around.
    pub fn capacity(&self) -> u64 {
        1u64 << self.address_bits()
    }

    pub fn decompose(&self, physical: u64) -> DramAddress {
        let mut a = DramAddress::default();
        let mut fill = [0u32; 6];
        let mut bits = physical >> self.offset_bits();
        for s in &self.slices {
            let v = (bits & ((1u64 << s.bits) - 1)) as u32;
            bits >>= s.bits;
            let i = s.field as usize;
            *s.field.slot(&mut a) |= v << fill[i];
            fill[i] += s.bits;
        }
        a
    }

    /// Inverse of [`decompose`](Self::decompose) for line-aligned addresses.
    pub fn compose(&self, a: &DramAddress) -> u64 {
        let mut fill = [0u32; 6];
        let mut out = 0u64;
        let mut pos = self.offset_bits();
        for s in &self.slices {
            let i = s.field as usize;
            let v = (s.field.get(a) >> fill[i]) as u64 & ((1u64 << s.bits) - 1);
            out |= v << pos;
            pos += s.bits;
            fill[i] += s.bits;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geometry() -> DeviceGeometry {
        DeviceGeometry::default()
    }

    #[test]
    fn mop_layout_covers_geometry() {
        let g = geometry();
        let m = AddressMapping::mop(&g);
        m.validate(&g).unwrap();
        assert_eq!(m.capacity(), g.capacity_bytes());
    }

    #[test]
    fn four_lines_per_row_chunk_then_next_bankgroup() {
        let g = geometry();
        let m = AddressMapping::mop(&g);
        let a: Vec<_> = (0..5).map(|i| m.decompose(i * 64)).collect();
        for (i, x) in a.iter().take(4).enumerate() {
            assert_eq!((x.bankgroup, x.column, x.row), (0, i as u32, 0));
        }
        assert_eq!((a[4].bankgroup, a[4].column), (1, 0));
        let rank_step = m.decompose(64 * 4 * 8 * 2);
        assert_eq!((rank_step.rank, rank_step.bankgroup, rank_step.bank), (1, 0, 0));
    }

    #[test]
    fn rejects_short_layout() {
        let g = geometry();
        let mut m = AddressMapping::mop(&g);
        m.slices.pop();
        assert!(m.validate(&g).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(line in 0u64..(1 << 28)) {
            let g = geometry();
            let m = AddressMapping::mop(&g);
            let addr = line * 64;
            let d = m.decompose(addr);
            g.check(&d).unwrap();
            prop_assert_eq!(m.compose(&d), addr);
        }

        #[test]
        fn inverse_round_trip(rank in 0u32..2, bg in 0u32..8, bank in 0u32..2, row in 0u32..65536, col in 0u32..128) {
            let m = AddressMapping::mop(&geometry());
            let a = DramAddress { channel: 0, rank, bankgroup: bg, bank, row, column: col };
            prop_assert_eq!(m.decompose(m.compose(&a)), a);
        }
    }
}
