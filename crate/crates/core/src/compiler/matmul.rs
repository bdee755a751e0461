//! `C = A * B` with A stationary.
//!
//! A group computes one column of C at a time: `A[i][k]` sits at
//! `(r0 + i, c0 + k)` and multiplies the broadcast `B[k][j]`; row `i` sends
//! its M products over the row bus to the accumulator at `(r0 + i, c0 + M)`,
//! which sums them and writes the result to the group's egress address.
//! The accumulators of a group share that address, so a column drains one
//! value per cycle in row order.
//!
//! Parallel mode gives each column of B its own group and feeds column `j`
//! on cycle `t0 + j`; sequential mode reuses one group and feeds column `j`
//! on cycle `t0 + j * N`, after the previous column has drained.

use serde::{Deserialize, Serialize};

use super::{
    check_config, egress_address, operand, required_sitems, vbus_port, CompileError, CompiledWorkload, OutputMap,
    OutputSlot, Placed, ProgLoader, Role, Span, StaticSchedule,
};
use crate::fabric::{FabricConfig, Geometry};
use crate::isa::{Message, MessageProgram, Opcode, SiteAddress};
use crate::oracle::{ReductionOrder, ShapeError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatMulMode {
    #[serde(alias = "single_sitem_sequential")]
    Sequential,
    #[default]
    #[serde(alias = "parallel_sitems")]
    Parallel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatMulSpec {
    a: Tensor<f32>,
    b: Tensor<f32>,
    pub mode: MatMulMode,
}

impl MatMulSpec {
    /// `a` is `N x M`, `b` is `M x P`.
    pub fn new(a: Tensor<f32>, b: Tensor<f32>, mode: MatMulMode) -> Result<Self, ShapeError> {
        match (a.dims(), b.dims()) {
            (&[n, m], &[m2, p]) if m == m2 && n > 0 && m > 0 && p > 0 => Ok(Self { a, b, mode }),
            (da, db) => Err(ShapeError::Mismatch(format!("cannot multiply {da:?} by {db:?}"))),
        }
    }

    pub fn a(&self) -> &Tensor<f32> {
        &self.a
    }

    pub fn b(&self) -> &Tensor<f32> {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.a.dims()[0]
    }

    pub fn m(&self) -> usize {
        self.a.dims()[1]
    }

    pub fn p(&self) -> usize {
        self.b.dims()[1]
    }

    fn groups(&self) -> usize {
        match self.mode {
            MatMulMode::Parallel => self.p(),
            MatMulMode::Sequential => 1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Group {
    r0: u16,
    c0: u16,
}

/// Packs up to `limit` groups of `n` rows by `m + 1` columns, left to right
/// within 4-row-aligned bands.
fn place_groups(geo: &Geometry, n: usize, m: usize, limit: usize) -> Vec<Group> {
    let band = n.div_ceil(4) * 4;
    let width = m + 1;
    let mut out = Vec::new();
    let mut r0 = 0usize;
    while out.len() < limit && r0 + n <= geo.rows() as usize {
        let row_width = geo.row_width((r0 + n - 1) as u16) as usize;
        let mut c0 = 0usize;
        while out.len() < limit && c0 + width <= row_width {
            out.push(Group { r0: r0 as u16, c0: c0 as u16 });
            c0 += width;
        }
        r0 += band;
    }
    out
}

/// Smallest SiteM count that holds the whole multiplication on one fabric.
pub fn matmul_min_sitems(n: usize, m: usize, p: usize, mode: MatMulMode) -> Option<u16> {
    let groups = if mode == MatMulMode::Parallel { p } else { 1 };
    (1..=crate::fabric::MAX_SITEMS).find(|&s| {
        let cfg = FabricConfig::with_sitems(s);
        place_groups(&Geometry::new(s), n, m, groups).len() == groups && cfg.egress_ports() as usize >= groups
    })
}

pub fn compile_matmul(spec: &MatMulSpec, cfg: &FabricConfig) -> Result<CompiledWorkload, CompileError> {
    let geo = check_config(cfg)?;
    let groups = place_groups(&geo, spec.n(), spec.m(), spec.groups());
    if groups.len() < spec.groups() {
        return Err(too_small(spec, cfg));
    }
    let columns: Vec<usize> = (0..spec.p()).collect();
    let (program, last_inj, t0) = programming(spec, cfg, &geo, &groups)?;
    build(spec, cfg, &geo, &groups, &columns, program, last_inj, t0)
}

/// Splits the columns of B over as many fabrics as needed, each shaped by
/// `cfg`. All fabrics share one clock: column `j` is fed on `t0 + j`
/// wherever it lives, so the slowest fabric bounds the whole product.
pub fn compile_matmul_blocks(spec: &MatMulSpec, cfg: &FabricConfig) -> Result<Vec<CompiledWorkload>, CompileError> {
    if spec.mode == MatMulMode::Sequential {
        return compile_matmul(spec, cfg).map(|c| vec![c]);
    }
    let geo = check_config(cfg)?;
    let per_fabric = place_groups(&geo, spec.n(), spec.m(), spec.p()).len().min(cfg.egress_ports() as usize);
    if per_fabric == 0 {
        return Err(too_small(spec, cfg));
    }
    let chunks: Vec<Vec<usize>> =
        (0..spec.p()).collect::<Vec<_>>().chunks(per_fabric).map(<[usize]>::to_vec).collect();
    let mut staged = Vec::new();
    for cols in &chunks {
        let groups = place_groups(&geo, spec.n(), spec.m(), cols.len());
        let (program, last_inj, t0) = programming(spec, cfg, &geo, &groups)?;
        staged.push((groups, program, last_inj, t0));
    }
    let t0 = staged.iter().map(|s| s.3).max().unwrap_or(0);
    staged
        .into_iter()
        .zip(&chunks)
        .map(|((groups, program, last_inj, _), cols)| build(spec, cfg, &geo, &groups, cols, program, last_inj, t0))
        .collect()
}

fn too_small(spec: &MatMulSpec, cfg: &FabricConfig) -> CompileError {
    let per_group = spec.n() * spec.m() + spec.n();
    CompileError::FabricTooSmall { required: per_group * spec.groups(), available: cfg.siteos() as usize }
}

fn a_site(geo: &Geometry, g: Group, i: usize, k: usize) -> SiteAddress {
    geo.at(g.r0 + i as u16, g.c0 + k as u16).expect("placed inside the fabric")
}

/// Phase 1 for the given groups. Returns the program, the last injection
/// cycle and the cycle the last Prog executes.
fn programming(
    spec: &MatMulSpec,
    cfg: &FabricConfig,
    geo: &Geometry,
    groups: &[Group],
) -> Result<(MessageProgram, u64, u64), CompileError> {
    let (n, m) = (spec.n(), spec.m());
    let mut loader = ProgLoader::new(*geo);
    for (gi, &g) in groups.iter().enumerate() {
        let egress = egress_address(cfg, gi)?;
        for i in 0..n {
            let acc = a_site(geo, g, i, m);
            for k in 0..m {
                loader.add(a_site(geo, g, i, k), spec.a.get(&[i, k]), Opcode::AAddS, acc);
            }
            loader.add(acc, Message::reduction_header(m as u32), Opcode::Update, egress);
        }
    }
    let mut program = MessageProgram::new();
    let (last_inj, last_exec) = loader.emit(&mut program)?;
    Ok((program, last_inj, last_exec))
}

#[allow(clippy::too_many_arguments)]
fn build(
    spec: &MatMulSpec,
    cfg: &FabricConfig,
    geo: &Geometry,
    groups: &[Group],
    columns: &[usize],
    mut program: MessageProgram,
    last_inj: u64,
    t0: u64,
) -> Result<CompiledWorkload, CompileError> {
    let (n, m, p) = (spec.n(), spec.m(), spec.p());
    let bands = n.div_ceil(4);
    let mut slots = Vec::new();
    let mut last_egress = t0;
    for (ci, &j) in columns.iter().enumerate() {
        let (gi, feed) = match spec.mode {
            MatMulMode::Parallel => (ci, t0 + j as u64),
            MatMulMode::Sequential => (0, t0 + (j * n) as u64),
        };
        let g = groups[gi];
        for k in 0..m {
            for band in 0..bands {
                let dest = a_site(geo, g, 4 * band, k);
                program.push(feed as u32, vbus_port(dest), operand(dest, spec.b.get(&[k, j])))?;
            }
        }
        let egress = egress_address(cfg, gi)?.raw();
        let before = if spec.mode == MatMulMode::Sequential { ci * n } else { 0 };
        for i in 0..n {
            slots.push(OutputSlot { address: egress, seq: before + i, index: i * p + j });
        }
        // multiply at feed+1, reduce at feed+2, memory writes land from feed+3.
        last_egress = last_egress.max(feed + 2 + n as u64);
    }

    let mut placement = Vec::new();
    for (gi, &g) in groups.iter().enumerate() {
        for i in 0..n {
            for k in 0..m {
                placement.push(Placed { role: Role::MatrixA { group: gi, row: i, col: k }, site: a_site(geo, g, i, k) });
            }
            placement.push(Placed { role: Role::Accumulator { group: gi, row: i }, site: a_site(geo, g, i, m) });
        }
    }
    let first_feed = match spec.mode {
        MatMulMode::Parallel => t0 + columns[0] as u64,
        MatMulMode::Sequential => t0,
    };
    Ok(CompiledWorkload {
        program,
        config: cfg.clone(),
        required_sitems: required_sitems(&placement),
        placement,
        schedule: StaticSchedule {
            programming: Span { start: 0, end: last_inj },
            programmed_at: t0,
            operation: Span { start: first_feed, end: last_egress },
        },
        outputs: OutputMap { dims: vec![n, p], slots },
        order: ReductionOrder::Ascending,
    })
}
