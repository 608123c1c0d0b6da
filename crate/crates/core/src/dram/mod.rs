//! DRAM device model: geometry, command timing, refresh and the RowHammer
//! damage oracle.

mod device;
mod oracle;
mod timing;

pub use device::{BankState, Device, DeviceEvent};
pub use oracle::{DamagePeak, SafetyOracle};
pub use timing::{Preset, TimingParams, REFS_PER_SWEEP};
pub(crate) use timing::line_of;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Simulation time in DRAM command-clock cycles.
pub type Cycle = u64;

/// Hardware thread index (one per core).
pub type ThreadId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceGeometry {
    pub channels: u32,
    pub ranks_per_channel: u32,
    pub bankgroups_per_rank: u32,
    pub banks_per_bankgroup: u32,
    pub rows_per_bank: u32,
    pub columns_per_row: u32,
    pub bytes_per_column: u32,
}

impl Default for DeviceGeometry {
    fn default() -> Self {
        Self {
            channels: 1,
            ranks_per_channel: 2,
            bankgroups_per_rank: 8,
            banks_per_bankgroup: 2,
            rows_per_bank: 64 * 1024,
            columns_per_row: 128,
            bytes_per_column: 64,
        }
    }
}

impl DeviceGeometry {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("channels", self.channels),
            ("ranks_per_channel", self.ranks_per_channel),
            ("bankgroups_per_rank", self.bankgroups_per_rank),
            ("banks_per_bankgroup", self.banks_per_bankgroup),
            ("rows_per_bank", self.rows_per_bank),
            ("columns_per_row", self.columns_per_row),
            ("bytes_per_column", self.bytes_per_column),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(SimError::config(
                    format!("dram.geometry.{name}"),
                    "must be at least 1",
                ));
            }
        }
        if !self.rows_per_bank.is_power_of_two() {
            return Err(SimError::config(
                "dram.geometry.rows_per_bank",
                "must be a power of two",
            ));
        }
        Ok(())
    }

    pub fn banks_per_rank(&self) -> u32 {
        self.bankgroups_per_rank * self.banks_per_bankgroup
    }

    pub fn ranks(&self) -> u32 {
        self.channels * self.ranks_per_channel
    }

    pub fn total_banks(&self) -> usize {
        (self.ranks() * self.banks_per_rank()) as usize
    }

    pub fn total_bankgroups(&self) -> usize {
        (self.ranks() * self.bankgroups_per_rank) as usize
    }

    pub fn row_bytes(&self) -> u64 {
        self.columns_per_row as u64 * self.bytes_per_column as u64
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.total_banks() as u64 * self.rows_per_bank as u64 * self.row_bytes()
    }

    /// Flat index of the rank holding `addr` across all channels.
    pub fn flat_rank(&self, addr: &DramAddress) -> usize {
        (addr.channel * self.ranks_per_channel + addr.rank) as usize
    }

    pub fn flat_bankgroup(&self, addr: &DramAddress) -> usize {
        self.flat_rank(addr) * self.bankgroups_per_rank as usize + addr.bankgroup as usize
    }

    pub fn flat_bank(&self, addr: &DramAddress) -> usize {
        self.flat_bankgroup(addr) * self.banks_per_bankgroup as usize + addr.bank as usize
    }

    /// Inverse of [`flat_bank`](Self::flat_bank); row and column are zero.
    pub fn bank_address(&self, flat_bank: usize) -> DramAddress {
        let bank = flat_bank as u32 % self.banks_per_bankgroup;
        let bg_flat = flat_bank as u32 / self.banks_per_bankgroup;
        let bankgroup = bg_flat % self.bankgroups_per_rank;
        let rank_flat = bg_flat / self.bankgroups_per_rank;
        DramAddress {
            channel: rank_flat / self.ranks_per_channel,
            rank: rank_flat % self.ranks_per_channel,
            bankgroup,
            bank,
            row: 0,
            column: 0,
        }
    }

    pub fn check(&self, addr: &DramAddress) -> Result<()> {
        let checks = [
            ("channel", addr.channel, self.channels),
            ("rank", addr.rank, self.ranks_per_channel),
            ("bankgroup", addr.bankgroup, self.bankgroups_per_rank),
            ("bank", addr.bank, self.banks_per_bankgroup),
            ("row", addr.row, self.rows_per_bank),
            ("column", addr.column, self.columns_per_row),
        ];
        for (field, value, limit) in checks {
            if value >= limit {
                return Err(SimError::AddressOutOfRange {
                    field,
                    value: value as u64,
                    limit: limit as u64,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct DramAddress {
    pub channel: u32,
    pub rank: u32,
    pub bankgroup: u32,
    pub bank: u32,
    pub row: u32,
    pub column: u32,
}

impl DramAddress {
    pub fn with_row(mut self, row: u32) -> Self {
        self.row = row;
        self
    }

    pub fn same_bank(&self, other: &DramAddress) -> bool {
        self.channel == other.channel
            && self.rank == other.rank
            && self.bankgroup == other.bankgroup
            && self.bank == other.bank
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CommandKind {
    Act,
    Pre,
    PreAll,
    Rd,
    Wr,
    Ref,
    /// Victim-row refresh of the neighbours of `address.row`.
    Vrr,
    Rfm,
}

impl CommandKind {
    pub const ALL: [CommandKind; 8] = [
        CommandKind::Act,
        CommandKind::Pre,
        CommandKind::PreAll,
        CommandKind::Rd,
        CommandKind::Wr,
        CommandKind::Ref,
        CommandKind::Vrr,
        CommandKind::Rfm,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            CommandKind::Act => "ACT",
            CommandKind::Pre => "PRE",
            CommandKind::PreAll => "PREab",
            CommandKind::Rd => "RD",
            CommandKind::Wr => "WR",
            CommandKind::Ref => "REF",
            CommandKind::Vrr => "VRR",
            CommandKind::Rfm => "RFM",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.mnemonic() == s)
    }

    /// Commands that target a whole rank rather than one bank.
    pub fn is_rank_level(self) -> bool {
        matches!(self, CommandKind::PreAll | CommandKind::Ref)
    }
}

/// A DRAM command. Rank-level commands ignore the bank group, bank, row
/// and column fields of `address`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DramCommand {
    pub kind: CommandKind,
    pub address: DramAddress,
}

impl DramCommand {
    pub fn new(kind: CommandKind, address: DramAddress) -> Self {
        Self { kind, address }
    }
}

/// One issued command as recorded in the controller's event log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub cycle: Cycle,
    pub command: DramCommand,
    /// Thread whose request caused the command (demand ACT/RD/WR only).
    pub thread: Option<ThreadId>,
    /// Rows refreshed by a VRR or RFM service.
    pub victims: u32,
}

impl CommandRecord {
    /// Compact single-line form: `cycle kind ch rank bg bank row col thread victims`.
    pub fn to_line(&self) -> String {
        let a = &self.command.address;
        let thread = self.thread.map_or_else(|| "-".to_string(), |t| t.to_string());
        format!(
            "{} {} {} {} {} {} {} {} {} {}",
            self.cycle,
            self.command.kind.mnemonic(),
            a.channel,
            a.rank,
            a.bankgroup,
            a.bank,
            a.row,
            a.column,
            thread,
            self.victims
        )
    }

    pub fn from_line(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 10 {
            return None;
        }
        let num = |i: usize| f[i].parse::<u32>().ok();
        Some(Self {
            cycle: f[0].parse().ok()?,
            command: DramCommand::new(
                CommandKind::from_mnemonic(f[1])?,
                DramAddress {
                    channel: num(2)?,
                    rank: num(3)?,
                    bankgroup: num(4)?,
                    bank: num(5)?,
                    row: num(6)?,
                    column: num(7)?,
                },
            ),
            thread: match f[8] {
                "-" => None,
                t => Some(t.parse().ok()?),
            },
            victims: num(9)?,
        })
    }
}
