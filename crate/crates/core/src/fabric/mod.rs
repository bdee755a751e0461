//! Cycle-stepped model of the SiteO/SiteM fabric.
//!
//! Every cycle runs in two phases. Phase A lets each SiteO look at the
//! state it held at the start of the cycle: bus deliveries and FIFO heads
//! addressed to it are executed, other FIFO heads request a hop. Phase B
//! commits transfers in ascending source order: granted hops move one link,
//! generated messages leave on a horizontal bus (same global row), a hop
//! link (other rows) or a memory port (egress addresses), and port
//! injections enter. A transfer whose target is full is held by its sender
//! and retried the next cycle.

mod config;
mod engine;
mod geometry;
mod report;
mod site;
mod trace;

pub use config::{FabricConfig, MAX_SITEMS};
pub use engine::{run_program, run_program_with_sink, run_to_end, RunEnd, RunOptions, RunOutput, Simulation};
pub use geometry::{Direction, Geometry, Neighbors, SITEMS_PER_GRID_ROW};
pub use report::{EgressRecord, RunReport};
pub use site::{SiteOState, INSTR_BUFFER_LEN};
pub use trace::{
    trace_hash, write_csv, write_jsonl, EventKind, HashSink, NullSink, TraceEvent, TraceSink, Unit,
    TRACE_CSV_HEADER,
};

use thiserror::Error;

use crate::isa::{Message, MessageProgram, PortId, SiteAddress};
use site::Site;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid fabric config: {0}")]
    Config(String),
    #[error("address {0} out of range for this fabric")]
    AddressOutOfRange(u16),
    #[error("invalid program: {0}")]
    BadProgram(String),
    #[error("site {site} at cycle {cycle}: {opcode} needs a continuation but none is programmed")]
    ContinuationMissing { site: SiteAddress, cycle: u64, opcode: crate::isa::Opcode },
    #[error("deadlock detected at cycle {cycle}: {reason}")]
    DeadlockDetected { cycle: u64, reason: String },
}

/// Where a message goes next from a given SiteO.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteDecision {
    ExecuteHere,
    StreamRight,
    StreamDown,
    /// Horizontal bus transfer within the global row.
    Bus,
    Egress,
}

impl From<Direction> for RouteDecision {
    fn from(d: Direction) -> Self {
        match d {
            Direction::Right => RouteDecision::StreamRight,
            Direction::Down => RouteDecision::StreamDown,
        }
    }
}

/// Static configuration plus the state of every SiteO.
#[derive(Debug, Clone)]
pub struct Fabric {
    cfg: FabricConfig,
    geo: Geometry,
    sites: Vec<Site>,
}

pub fn build_fabric(cfg: FabricConfig) -> Result<Fabric, SimError> {
    Fabric::new(cfg)
}

impl Fabric {
    pub fn new(cfg: FabricConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let geo = Geometry::new(cfg.sitems);
        let sites = vec![Site::default(); cfg.siteos() as usize];
        Ok(Self { cfg, geo, sites })
    }

    pub fn config(&self) -> &FabricConfig {
        &self.cfg
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geo
    }

    pub fn siteo_count(&self) -> usize {
        self.sites.len()
    }

    /// Returns every SiteO to its power-on state.
    pub fn reset(&mut self) {
        self.sites.iter_mut().for_each(|s| *s = Site::default());
    }

    pub fn is_egress(&self, addr: SiteAddress) -> bool {
        !self.geo.is_site(addr)
    }

    /// Per-hop routing of a message sitting in the FIFO of `here`.
    pub fn route(&self, here: SiteAddress, msg: &Message) -> RouteDecision {
        if msg.dest == here {
            RouteDecision::ExecuteHere
        } else if self.is_egress(msg.dest) {
            RouteDecision::Egress
        } else {
            self.geo.hop_direction(here, msg.dest).into()
        }
    }

    /// Routing of a message generated by `here`: same-row destinations use
    /// a horizontal bus, other rows hop.
    pub fn route_emission(&self, here: SiteAddress, msg: &Message) -> RouteDecision {
        if self.is_egress(msg.dest) {
            RouteDecision::Egress
        } else if self.geo.same_row(here, msg.dest) {
            RouteDecision::Bus
        } else {
            self.geo.hop_direction(here, msg.dest).into()
        }
    }

    pub fn inspect(&self, addr: SiteAddress) -> Result<SiteOState, SimError> {
        let site = self
            .sites
            .get(addr.raw() as usize)
            .ok_or(SimError::AddressOutOfRange(addr.raw()))?;
        let core = &site.core;
        Ok(SiteOState {
            address: addr,
            stored_value: f32::from_bits(core.stored_bits),
            stored_bits: core.stored_bits,
            continuation: core.continuation,
            arity: core.arity,
            counter: core.counter,
            mid_reduction: core.mid_reduction(),
            instr_buffer: site.out.iter().copied().collect(),
            fifo_left: site.fifo_left.iter().copied().collect(),
            fifo_top: site.fifo_top.iter().copied().collect(),
            neighbors: self.geo.neighbors(addr),
        })
    }

    /// Ports that exist on this fabric: one top port per column of the
    /// first global row, and `buses_per_col` vertical-bus ports per SiteM
    /// column.
    pub fn has_port(&self, port: PortId) -> bool {
        match port {
            PortId::Top { col } => col < self.geo.row_width(0),
            PortId::VBus { sitem, col, bus } => {
                sitem < self.cfg.sitems && col < 4 && (bus as usize) < self.cfg.buses_per_col
            }
        }
    }

    pub fn validate_program(&self, program: &MessageProgram) -> Result<(), SimError> {
        for inj in program.injections() {
            if !self.has_port(inj.port) {
                return Err(SimError::BadProgram(format!(
                    "cycle {}: port {} does not exist",
                    inj.cycle, inj.port
                )));
            }
            if let PortId::VBus { sitem, col, .. } = inj.port {
                let d = inj.message.dest;
                if d.sitem_index() != sitem || d.local_col() != col {
                    return Err(SimError::BadProgram(format!(
                        "cycle {}: port {} cannot reach site {}",
                        inj.cycle, inj.port, d
                    )));
                }
            }
        }
        Ok(())
    }
}
