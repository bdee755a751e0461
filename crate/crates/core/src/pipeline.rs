//! Compile, simulate and oracle-check a workload in one pass.

use serde::Serialize;
use thiserror::Error;

use crate::compiler::{
    compile_cnn, compile_matmul_blocks, matmul_span, merge_block_outputs, CompileError, CompiledWorkload, MatMulMode,
    Workload,
};
use crate::fabric::{build_fabric, run_program, FabricConfig, RunOptions, RunReport, SimError, TraceEvent};
use crate::oracle::{classifier_ref, cnn_forward_ref, conv_block_ref, matmul_ref, ShapeError, Tensor};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Totals over every fabric a workload ran on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub workload: &'static str,
    pub dims: Vec<usize>,
    pub sitems: u16,
    pub blocks: usize,
    pub programming_end_cycle: Option<u64>,
    pub first_operation_injection_cycle: Option<u64>,
    pub last_egress_cycle: Option<u64>,
    /// First operand injection through last egress over all blocks.
    pub operation_span: u64,
    /// `N + P + 2` for parallel matmuls.
    pub analytic_span: Option<u64>,
    pub total_cycles: u64,
    pub injected: u64,
    pub executed: u64,
    pub egressed: u64,
    pub hops: u64,
    pub bus_transfers: u64,
    pub stalls: u64,
    pub fifo_overflows: u64,
    pub trace_hashes: Vec<String>,
    pub oracle: OracleVerdict,
    pub max_abs_diff: f64,
    /// Host-side classifier output per image; empty without dense layers.
    pub scores: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum OracleVerdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone)]
pub struct WorkloadRun {
    pub summary: RunSummary,
    pub compiled: Vec<CompiledWorkload>,
    pub reports: Vec<RunReport>,
    /// Simulated output: `[N, P]` for matmuls, `[B, F, OH, OW]` for CNNs.
    pub output: Tensor<f32>,
    pub expected: Tensor<f32>,
    /// Host-side classifier scores per image, when the CNN has dense layers.
    pub scores: Vec<Vec<f32>>,
    pub trace: Vec<TraceEvent>,
}

/// Fabric used for `w`: an explicit override, else the workload's own
/// `[fabric]` table, else the default.
pub fn resolve_config(w: &Workload, explicit: Option<&FabricConfig>) -> FabricConfig {
    explicit.or(w.fabric()).cloned().unwrap_or_default()
}

pub fn compile_workload(w: &Workload, cfg: &FabricConfig) -> Result<Vec<CompiledWorkload>, CompileError> {
    match w {
        Workload::MatMul { spec, .. } => compile_matmul_blocks(spec, cfg),
        Workload::Cnn { spec, .. } => Ok(vec![compile_cnn(spec, cfg)?]),
    }
}

/// Runs already compiled blocks, each on a fresh fabric.
pub fn simulate_blocks(
    blocks: &[CompiledWorkload],
    opts: &RunOptions,
) -> Result<(Vec<RunReport>, Vec<TraceEvent>), SimError> {
    let mut reports = Vec::with_capacity(blocks.len());
    let mut trace = Vec::new();
    for b in blocks {
        let mut fabric = build_fabric(b.config.clone())?;
        let out = run_program(&mut fabric, &b.program, opts)?;
        reports.push(out.report);
        trace.extend(out.trace);
    }
    Ok((reports, trace))
}

pub fn run_workload(w: &Workload, cfg: &FabricConfig, opts: &RunOptions) -> Result<WorkloadRun, PipelineError> {
    let compiled = compile_workload(w, cfg)?;
    let (reports, trace) = simulate_blocks(&compiled, opts)?;
    let records: Vec<_> = reports.iter().map(|r| r.egress.clone()).collect();
    let output = merge_block_outputs(&compiled, &records)?;
    let order = compiled[0].order.clone();
    let (name, expected, scores, analytic_span) = match w {
        Workload::MatMul { spec, .. } => {
            let expected = matmul_ref(spec.a(), spec.b(), &order)?;
            let analytic = (spec.mode == MatMulMode::Parallel).then(|| matmul_span(spec.n(), spec.p()) as u64);
            ("matmul", expected, Vec::new(), analytic)
        }
        Workload::Cnn { spec, .. } => {
            let mut expected = Vec::new();
            let mut scores = Vec::new();
            let per_image: usize = output.dims()[1..].iter().product();
            for (b, img) in spec.images.iter().enumerate() {
                expected.extend_from_slice(conv_block_ref(&spec.net, img)?.data());
                if !spec.net.dense.is_empty() {
                    let feats = &output.data()[b * per_image..(b + 1) * per_image];
                    let (s, probs) = classifier_ref(&spec.net, feats)?;
                    let want = cnn_forward_ref(&spec.net, img)?;
                    let same = |x: &[f32], y: &[f32]| x.iter().zip(y).all(|(a, b)| a.to_bits() == b.to_bits());
                    if !same(&s, &want.scores) || !same(&probs, &want.probabilities) {
                        return Err(ShapeError::Mismatch(format!("classifier diverged on image {b}")).into());
                    }
                    scores.push(if spec.net.softmax { probs } else { s });
                }
            }
            ("cnn", Tensor::new(output.dims(), expected)?, scores, None)
        }
    };
    let pass = output.bit_eq(&expected);
    let max_abs_diff = output
        .data()
        .iter()
        .zip(expected.data())
        .map(|(a, b)| (*a as f64 - *b as f64).abs())
        .fold(0.0, f64::max);
    let mut summary = summarize(name, &compiled, &reports, output.dims().to_vec(), analytic_span, pass, max_abs_diff);
    summary.scores = scores.clone();
    Ok(WorkloadRun { summary, compiled, reports, output, expected, scores, trace })
}

fn summarize(
    workload: &'static str,
    compiled: &[CompiledWorkload],
    reports: &[RunReport],
    dims: Vec<usize>,
    analytic_span: Option<u64>,
    pass: bool,
    max_abs_diff: f64,
) -> RunSummary {
    let first_op = reports.iter().filter_map(|r| r.first_operation_injection_cycle).min();
    let last_egress = reports.iter().filter_map(|r| r.last_egress_cycle).max();
    let first_inject = reports.iter().filter_map(|r| r.first_injection_cycle).min();
    let sum = |f: fn(&RunReport) -> u64| reports.iter().map(f).sum();
    RunSummary {
        workload,
        dims,
        sitems: compiled[0].config.sitems,
        blocks: compiled.len(),
        programming_end_cycle: reports.iter().filter_map(|r| r.programming_end_cycle).max(),
        first_operation_injection_cycle: first_op,
        last_egress_cycle: last_egress,
        operation_span: match (first_op, last_egress) {
            (Some(a), Some(b)) => b + 1 - a,
            _ => 0,
        },
        analytic_span,
        total_cycles: match (first_inject, last_egress) {
            (Some(a), Some(b)) => b + 1 - a,
            _ => 0,
        },
        injected: sum(|r| r.injected),
        executed: sum(|r| r.executed),
        egressed: sum(|r| r.egressed),
        hops: sum(|r| r.hops),
        bus_transfers: sum(|r| r.bus_transfers),
        stalls: sum(|r| r.stalls),
        fifo_overflows: sum(|r| r.fifo_overflows),
        trace_hashes: reports.iter().map(|r| r.trace_hash.clone()).collect(),
        oracle: if pass { OracleVerdict::Pass } else { OracleVerdict::Fail },
        max_abs_diff,
        scores: Vec::new(),
    }
}

impl RunSummary {
    pub fn to_text(&self) -> String {
        let opt = |v: Option<u64>| v.map_or("-".to_string(), |c| format!("CC{c}"));
        let mut s = String::new();
        s.push_str(&format!("workload            {} {:?}\n", self.workload, self.dims));
        s.push_str(&format!("fabric              {} SiteMs x {} block(s)\n", self.sitems, self.blocks));
        s.push_str(&format!("programming end     {}\n", opt(self.programming_end_cycle)));
        s.push_str(&format!("first operand       {}\n", opt(self.first_operation_injection_cycle)));
        s.push_str(&format!("last egress         {}\n", opt(self.last_egress_cycle)));
        s.push_str(&format!("operation span      {}\n", self.operation_span));
        if let Some(a) = self.analytic_span {
            s.push_str(&format!("analytic span       {a} (offset {})\n", self.operation_span as i64 - a as i64));
        }
        s.push_str(&format!("total cycles        {}\n", self.total_cycles));
        s.push_str(&format!(
            "messages            injected {} executed {} egressed {}\n",
            self.injected, self.executed, self.egressed
        ));
        s.push_str(&format!(
            "traffic             hops {} bus {} stalls {} overflows {}\n",
            self.hops, self.bus_transfers, self.stalls, self.fifo_overflows
        ));
        for (i, h) in self.trace_hashes.iter().enumerate() {
            s.push_str(&format!("trace hash [{i}]      {h}\n"));
        }
        let verdict = match self.oracle {
            OracleVerdict::Pass => "PASS",
            OracleVerdict::Fail => "FAIL",
        };
        for (i, row) in self.scores.iter().enumerate() {
            s.push_str(&format!("classifier [{i}]      {row:?}\n"));
        }
        s.push_str(&format!("oracle              {verdict} (max |diff| {:e})\n", self.max_abs_diff));
        s
    }
}
