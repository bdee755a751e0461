//! Lowering of matrix multiplications and small CNNs to message programs.
//!
//! Both mappings follow the same two phases. Phase 1 sends one Prog per
//! used SiteO through the top port of its column, farthest row first, so
//! every SiteO of a column is programmed on the same cycle. Phase 2 starts
//! on that cycle and streams operands through the vertical buses: one
//! message per SiteM column band is broadcast to every programmed SiteO
//! below the addressed one.

mod cnn;
mod matmul;
mod workload;

pub use cnn::{cnn_min_sitems, compile_cnn, CnnSpec};
pub use matmul::{compile_matmul, compile_matmul_blocks, matmul_min_sitems, MatMulMode, MatMulSpec};
pub use workload::{load_workload, parse_workload, read_f32_blob, Workload, WorkloadError};

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::fabric::{EgressRecord, FabricConfig, Geometry};
use crate::isa::{Message, MessageProgram, Opcode, PortId, ProgramError, SiteAddress};
use crate::oracle::{ReductionOrder, ShapeError, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error("invalid fabric config: {0}")]
    Config(String),
    #[error("fabric too small: needs {required} SiteOs, {available} available")]
    FabricTooSmall { required: usize, available: usize },
    #[error("shape error: {0}")]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error("expected {expected} egress values, got {got}")]
    OutputMismatch { expected: usize, got: usize },
}

/// `((N * M) + N) * P`: SiteOs used by the parallel matmul mapping.
pub fn siteo_count(n: usize, m: usize, p: usize) -> usize {
    (n * m + n) * p
}

/// `N + P + 2`: operation-phase cycles of the parallel matmul mapping.
pub fn matmul_span(n: usize, p: usize) -> usize {
    n + p + 2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum Role {
    MatrixA { group: usize, row: usize, col: usize },
    Accumulator { group: usize, row: usize },
    Weight { filter: usize, pos: usize },
    Adder { filter: usize },
    Relu { filter: usize },
    Pool { filter: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Placed {
    #[serde(flatten)]
    pub role: Role,
    pub site: SiteAddress,
}

/// Inclusive cycle range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Span {
    pub start: u64,
    pub end: u64,
}

impl Span {
    pub fn len(&self) -> u64 {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Cycle plan derived at compile time. `programming` covers the Prog
/// injections, `operation` the first operand injection through the last
/// egress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StaticSchedule {
    pub programming: Span,
    /// Cycle on which the last Prog executes.
    pub programmed_at: u64,
    pub operation: Span,
}

/// Which output element each egress value is.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputMap {
    pub dims: Vec<usize>,
    pub slots: Vec<OutputSlot>,
}

/// The `seq`-th value written to egress `address` is output element
/// `index` (row-major flat index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OutputSlot {
    pub address: u16,
    pub seq: usize,
    pub index: usize,
}

fn arrivals(records: &[EgressRecord]) -> HashMap<u16, Vec<f32>> {
    let mut sorted: Vec<&EgressRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.cycle);
    let mut by_addr: HashMap<u16, Vec<f32>> = HashMap::new();
    for r in sorted {
        by_addr.entry(r.address).or_default().push(r.value);
    }
    by_addr
}

impl OutputMap {
    fn fill(&self, records: &[EgressRecord], data: &mut [f32]) -> Result<(), CompileError> {
        if records.len() != self.slots.len() {
            return Err(CompileError::OutputMismatch { expected: self.slots.len(), got: records.len() });
        }
        let by_addr = arrivals(records);
        for s in &self.slots {
            data[s.index] = *by_addr
                .get(&s.address)
                .and_then(|vs| vs.get(s.seq))
                .ok_or(CompileError::OutputMismatch { expected: self.slots.len(), got: records.len() })?;
        }
        Ok(())
    }

    /// Rebuilds the output tensor from one run's egress records.
    pub fn gather(&self, records: &[EgressRecord]) -> Result<Tensor<f32>, CompileError> {
        let mut data = vec![f32::NAN; self.dims.iter().product()];
        self.fill(records, &mut data)?;
        Ok(Tensor::new(&self.dims, data)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledWorkload {
    pub program: MessageProgram,
    pub config: FabricConfig,
    /// SiteMs up to and including the highest one used.
    pub required_sitems: u16,
    pub placement: Vec<Placed>,
    pub schedule: StaticSchedule,
    pub outputs: OutputMap,
    /// Order in which each reduction SiteO receives its operands.
    pub order: ReductionOrder,
}

/// Gathers the outputs of a workload split over several fabrics;
/// `records[i]` are the egress records of `blocks[i]`.
pub fn merge_block_outputs(
    blocks: &[CompiledWorkload],
    records: &[Vec<EgressRecord>],
) -> Result<Tensor<f32>, CompileError> {
    let dims = blocks.first().map(|b| b.outputs.dims.clone()).unwrap_or_default();
    let mut data = vec![f32::NAN; dims.iter().product()];
    if blocks.len() != records.len() {
        return Err(CompileError::OutputMismatch { expected: blocks.len(), got: records.len() });
    }
    for (b, recs) in blocks.iter().zip(records) {
        b.outputs.fill(recs, &mut data)?;
    }
    Ok(Tensor::new(&dims, data)?)
}

/// Phase-1 emitter: sends each column's Progs through its top port, farthest
/// row first, one per cycle.
struct ProgLoader {
    geo: Geometry,
    by_col: BTreeMap<u16, Vec<(u16, Message)>>,
}

impl ProgLoader {
    fn new(geo: Geometry) -> Self {
        Self { geo, by_col: Default::default() }
    }

    fn add(&mut self, site: SiteAddress, value: f32, next: Opcode, next_dest: SiteAddress) {
        let (row, col) = self.geo.coords(site);
        let msg = Message::new(Opcode::Prog, site, value, next, next_dest);
        self.by_col.entry(col).or_default().push((row, msg));
    }

    /// Pushes the Progs and returns `(last injection, last execution)`.
    fn emit(mut self, program: &mut MessageProgram) -> Result<(u64, u64), CompileError> {
        let (mut last_inj, mut last_exec) = (0u64, 0u64);
        for (col, entries) in self.by_col.iter_mut() {
            entries.sort_by_key(|e| std::cmp::Reverse(e.0));
            for (slot, (row, msg)) in entries.iter().enumerate() {
                program.push(slot as u32, PortId::Top { col: *col }, *msg)?;
                last_inj = last_inj.max(slot as u64);
                last_exec = last_exec.max(slot as u64 + *row as u64 + 1);
            }
        }
        Ok((last_inj, last_exec))
    }
}

fn egress_address(cfg: &FabricConfig, index: usize) -> Result<SiteAddress, CompileError> {
    let raw = cfg.egress_base() as usize + index;
    SiteAddress::new(raw as u16)
        .ok()
        .filter(|_| raw < crate::isa::ADDRESS_SPACE as usize)
        .ok_or(CompileError::FabricTooSmall {
            required: cfg.siteos() as usize + index + 1,
            available: crate::isa::ADDRESS_SPACE as usize,
        })
}

fn check_config(cfg: &FabricConfig) -> Result<Geometry, CompileError> {
    cfg.validate().map_err(|e| CompileError::Config(e.to_string()))?;
    Ok(Geometry::new(cfg.sitems))
}

fn required_sitems(placement: &[Placed]) -> u16 {
    placement.iter().map(|p| p.site.sitem_index() + 1).max().unwrap_or(0)
}

/// Operand message for the vertical bus feeding `dest` and the programmed
/// SiteOs below it.
fn operand(dest: SiteAddress, value: f32) -> Message {
    Message::new(Opcode::AMulS, dest, value, Opcode::Prog, SiteAddress::default())
}

fn vbus_port(dest: SiteAddress) -> PortId {
    PortId::VBus { sitem: dest.sitem_index(), col: dest.local_col(), bus: 0 }
}
