use serde::{Deserialize, Serialize};

use super::SimError;
use crate::isa::ADDRESS_SPACE;

pub const MAX_SITEMS: u16 = 256;

/// Static fabric geometry and timing parameters.
///
/// Parsed from a `key = value` text file; every key is optional:
///
/// ```text
/// sitems = 3                # SiteMs (16 SiteOs each), at most 256
/// fifo_depth = 4            # entries per Left/Top FIFO
/// buses_per_row = 4         # horizontal buses per SiteM row
/// buses_per_col = 4         # vertical buses per SiteM column
/// sitem_egress_width = 12   # memory egress messages per SiteM per cycle
/// clock_hz = 100000000      # used only to convert cycles to seconds
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FabricConfig {
    pub sitems: u16,
    pub fifo_depth: usize,
    pub buses_per_row: usize,
    pub buses_per_col: usize,
    pub sitem_egress_width: usize,
    pub clock_hz: f64,
}

impl Default for FabricConfig {
    fn default() -> Self {
        Self {
            sitems: 3,
            fifo_depth: 4,
            buses_per_row: 4,
            buses_per_col: 4,
            sitem_egress_width: 12,
            clock_hz: 1e8,
        }
    }
}

impl FabricConfig {
    pub fn with_sitems(sitems: u16) -> Self {
        Self { sitems, ..Self::default() }
    }

    pub fn siteos(&self) -> u16 {
        self.sitems * 16
    }

    /// First memory-mapped egress address; `[egress_base, 4096)` are output ports.
    pub fn egress_base(&self) -> u16 {
        self.siteos()
    }

    pub fn egress_ports(&self) -> u16 {
        ADDRESS_SPACE - self.siteos()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::Config(msg));
        if self.sitems == 0 || self.sitems > MAX_SITEMS {
            return fail(format!("sitems must be in 1..=256, got {}", self.sitems));
        }
        if self.fifo_depth == 0 {
            return fail("fifo_depth must be at least 1".into());
        }
        if !(1..=4).contains(&self.buses_per_row) || !(1..=4).contains(&self.buses_per_col) {
            return fail("buses_per_row and buses_per_col must be in 1..=4".into());
        }
        if self.sitem_egress_width == 0 {
            return fail("sitem_egress_width must be at least 1".into());
        }
        if !(self.clock_hz > 0.0) {
            return fail("clock_hz must be positive".into());
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, SimError> {
        let cfg: Self = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
