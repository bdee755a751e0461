use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Message, SiteAddress};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("bad port id `{0}`")]
    BadPort(String),
    #[error("two injections on port {port} at cycle {cycle}")]
    DuplicateSlot { cycle: u32, port: PortId },
}

/// Fabric ingress port.
///
/// `Top` ports feed the top FIFO of the first-row SiteO of a global column;
/// messages entering there hop to their destination. `VBus` ports drive one
/// vertical bus of one SiteM column and deliver in a single cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum PortId {
    Top { col: u16 },
    VBus { sitem: u16, col: u8, bus: u8 },
}

impl PortId {
    /// 16-bit image used by the binary program format.
    pub fn to_bits(self) -> u16 {
        match self {
            PortId::Top { col } => col & 0x7FFF,
            PortId::VBus { sitem, col, bus } => {
                0x8000 | (sitem & 0xFF) << 4 | ((col & 3) as u16) << 2 | (bus & 3) as u16
            }
        }
    }

    pub fn from_bits(bits: u16) -> Self {
        if bits & 0x8000 == 0 {
            PortId::Top { col: bits }
        } else {
            PortId::VBus {
                sitem: (bits >> 4) & 0xFF,
                col: ((bits >> 2) & 3) as u8,
                bus: (bits & 3) as u8,
            }
        }
    }
}

impl fmt::Display for PortId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PortId::Top { col } => write!(f, "T{col}"),
            PortId::VBus { sitem, col, bus } => write!(f, "V{sitem}.{col}.{bus}"),
        }
    }
}

impl FromStr for PortId {
    type Err = ProgramError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ProgramError::BadPort(s.to_string());
        if let Some(rest) = s.strip_prefix('T') {
            let col: u16 = rest.parse().map_err(|_| bad())?;
            if col >= 0x8000 {
                return Err(bad());
            }
            return Ok(PortId::Top { col });
        }
        if let Some(rest) = s.strip_prefix('V') {
            let parts: Vec<&str> = rest.split('.').collect();
            if let [sitem, col, bus] = parts[..] {
                let sitem: u16 = sitem.parse().map_err(|_| bad())?;
                let col: u8 = col.parse().map_err(|_| bad())?;
                let bus: u8 = bus.parse().map_err(|_| bad())?;
                if sitem < 256 && col < 4 && bus < 4 {
                    return Ok(PortId::VBus { sitem, col, bus });
                }
            }
        }
        Err(bad())
    }
}

impl From<PortId> for String {
    fn from(p: PortId) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for PortId {
    type Error = ProgramError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Injection {
    pub cycle: u32,
    pub port: PortId,
    pub message: Message,
}

/// A result the program expects to see leave the fabric, in arrival order
/// per address.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedEgress {
    pub address: SiteAddress,
    pub tag: String,
}

/// Timed injection schedule. Injections stay sorted by `(cycle, port)` with
/// at most one message per slot.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MessageProgram {
    injections: Vec<Injection>,
    pub expected_egress: Vec<ExpectedEgress>,
}

impl MessageProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_injections(mut injections: Vec<Injection>) -> Result<Self, ProgramError> {
        injections.sort_by_key(|i| (i.cycle, i.port));
        for pair in injections.windows(2) {
            if pair[0].cycle == pair[1].cycle && pair[0].port == pair[1].port {
                return Err(ProgramError::DuplicateSlot {
                    cycle: pair[0].cycle,
                    port: pair[0].port,
                });
            }
        }
        Ok(Self {
            injections,
            expected_egress: Vec::new(),
        })
    }

    pub fn push(&mut self, cycle: u32, port: PortId, message: Message) -> Result<(), ProgramError> {
        let key = (cycle, port);
        let pos = self.injections.partition_point(|i| (i.cycle, i.port) < key);
        if self.injections.get(pos).is_some_and(|i| (i.cycle, i.port) == key) {
            return Err(ProgramError::DuplicateSlot { cycle, port });
        }
        self.injections.insert(pos, Injection { cycle, port, message });
        Ok(())
    }

    pub fn injections(&self) -> &[Injection] {
        &self.injections
    }

    pub fn len(&self) -> usize {
        self.injections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.injections.is_empty()
    }

    /// Shifts every injection by `offset` cycles.
    pub fn delayed(mut self, offset: u32) -> Self {
        for inj in &mut self.injections {
            inj.cycle += offset;
        }
        self
    }
}
