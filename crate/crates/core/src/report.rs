//! Comparison reports: closed forms, simulated spans and throughput
//! against published figures.

use std::fmt::Write as _;

use serde::Serialize;

use crate::analytic::{self, compare, latency, reference_values, resources, Arch, Comparison, Resources};
use crate::compiler::{compile_cnn, siteo_count, CnnSpec, MatMulMode, MatMulSpec, Workload};
use crate::fabric::{FabricConfig, RunOptions};
use crate::oracle::{CnnWeights, Tensor};
use crate::pipeline::{run_workload, PipelineError};

/// The example network: 5x5 image, four 3x3 filters, RELU, 2x2 max pool
/// with stride 1.
pub fn table_cnn(images: usize) -> CnnSpec {
    let filters = Tensor::from_fn(&[4, 1, 3, 3], |i| 0.25 * (1 + i[0] + i[2] * 3 + i[3]) as f32 - 1.0);
    let images = (0..images)
        .map(|b| Tensor::from_fn(&[1, 5, 5], |i| ((b * 7 + i[1] * 5 + i[2]) % 11) as f32 * 0.125))
        .collect();
    let net = CnnWeights { filters, stride: 1, pad: 0, relu: true, pool: Some((2, 1)), dense: vec![], softmax: false };
    CnnSpec { net, images }
}

/// Pipelined batch through the example network.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchMeasurement {
    pub sitems: u16,
    pub batch: usize,
    pub single_image_cycles: u64,
    pub batch_cycles: u64,
    /// `(batch_cycles - single_image_cycles) / (batch - 1)`.
    pub marginal_cycles_per_image: f64,
    /// Clock divided by the published images/s figure.
    pub reference_cycles_per_image: f64,
    pub oracle_pass: bool,
}

pub fn measure_table_cnn(batch: usize) -> Result<BatchMeasurement, PipelineError> {
    assert!(batch >= 2, "marginal cost needs at least two images");
    let cfg = FabricConfig::default();
    let run = |n: usize| {
        let w = Workload::Cnn { spec: table_cnn(n), fabric: None };
        run_workload(&w, &cfg, &RunOptions { keep_trace: false, ..RunOptions::default() })
    };
    let one = run(1)?;
    let many = run(batch)?;
    let reference = reference_values()
        .into_iter()
        .find(|r| r.id == "table_cnn_throughput")
        .expect("bundled table carries the example network figure");
    Ok(BatchMeasurement {
        sitems: cfg.sitems,
        batch,
        single_image_cycles: one.summary.total_cycles,
        batch_cycles: many.summary.total_cycles,
        marginal_cycles_per_image: (many.summary.total_cycles - one.summary.total_cycles) as f64 / (batch - 1) as f64,
        reference_cycles_per_image: reference.clock_hz / reference.value,
        oracle_pass: one.summary.oracle == crate::pipeline::OracleVerdict::Pass
            && many.summary.oracle == crate::pipeline::OracleVerdict::Pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputReport {
    pub lane_efficiency: f64,
    pub fill_cycles: u64,
    pub rows: Vec<Comparison>,
    pub simulated: BatchMeasurement,
}

pub fn throughput_report(lane_efficiency: f64, fill_cycles: u64, batch: usize) -> Result<ThroughputReport, PipelineError> {
    let rows = reference_values()
        .iter()
        .map(|r| compare(r, lane_efficiency, fill_cycles).expect("bundled workloads are valid"))
        .collect();
    Ok(ThroughputReport { lane_efficiency, fill_cycles, rows, simulated: measure_table_cnn(batch)? })
}

fn show(metric: analytic::Metric, v: f64) -> String {
    match metric {
        analytic::Metric::Seconds => format!("{:.1} ms", v * 1e3),
        analytic::Metric::ImagesPerSecond => format!("{:.2}e6 img/s", v / 1e6),
    }
}

impl ThroughputReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "throughput model: cycles = ceil(ops / (siteos * {})) + {}, ops = outputs * (taps + 1)\n",
            self.lane_efficiency, self.fill_cycles
        );
        let _ = writeln!(s, "{:<22} {:>18} {:>18} {:>9}  source", "id", "reference", "model", "ratio");
        for c in &self.rows {
            let metric = c.reference.metric;
            let _ = writeln!(
                s,
                "{:<22} {:>18} {:>18} {:>9.4}  {}",
                c.reference.id,
                show(metric, c.reference.value),
                show(metric, c.model_value),
                c.ratio,
                c.reference.source
            );
        }
        let m = &self.simulated;
        let _ = writeln!(
            s,
            "simulated example network on {} SiteMs: {} cycles for 1 image, {} for {}; steady state {:.2} cycles/image (reference {:.2}); oracle {}",
            m.sitems,
            m.single_image_cycles,
            m.batch_cycles,
            m.batch,
            m.marginal_cycles_per_image,
            m.reference_cycles_per_image,
            if m.oracle_pass { "PASS" } else { "FAIL" }
        );
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", analytic::COMPARISON_CSV_HEADER);
        for c in &self.rows {
            let _ = writeln!(s, "{}", c.to_csv_line());
        }
        let m = &self.simulated;
        let _ = writeln!(
            s,
            "simulated_cycles_per_image,cycles,{},{},{:.4},{},,,\"batch of {} on {} SiteMs\"",
            m.reference_cycles_per_image,
            m.marginal_cycles_per_image,
            m.marginal_cycles_per_image / m.reference_cycles_per_image,
            m.batch_cycles,
            m.batch,
            m.sitems
        );
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedFormRow {
    pub arch: Arch,
    pub n: u64,
    pub m: u64,
    pub p: u64,
    pub latency: u64,
    pub resources: Resources,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanRow {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub analytic: u64,
    pub simulated: u64,
    pub offset: i64,
    pub oracle_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanSweep {
    pub sitems: u16,
    pub rows: Vec<SpanRow>,
    /// The common offset when every row agrees on one.
    pub constant_offset: Option<i64>,
}

/// Simulates the parallel matmul mapping at every `(n, m, p)` and compares
/// its operation span with `N + P + 2`. Multiplications larger than the
/// fabric are split over fabrics sharing one clock.
pub fn matmul_span_sweep(points: &[(usize, usize, usize)], sitems: u16, seed: u64) -> Result<SpanSweep, PipelineError> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let cfg = FabricConfig::with_sitems(sitems);
    let opts = RunOptions { keep_trace: false, ..RunOptions::default() };
    let mut rows = Vec::new();
    for &(n, m, p) in points {
        let mut fill = |r: usize, c: usize| Tensor::from_fn(&[r, c], |_| rng.gen_range(-1.0f32..1.0));
        let spec = MatMulSpec::new(fill(n, m), fill(m, p), MatMulMode::Parallel)?;
        let run = run_workload(&Workload::MatMul { spec, fabric: None }, &cfg, &opts)?;
        let analytic = latency(Arch::Mipu, n as u64, m as u64, p as u64);
        rows.push(SpanRow {
            n,
            m,
            p,
            analytic,
            simulated: run.summary.operation_span,
            offset: run.summary.operation_span as i64 - analytic as i64,
            oracle_pass: run.summary.oracle == crate::pipeline::OracleVerdict::Pass,
        });
    }
    let constant_offset = match rows.first() {
        Some(r) if rows.iter().all(|x| x.offset == r.offset) => Some(r.offset),
        _ => None,
    };
    Ok(SpanSweep { sitems, rows, constant_offset })
}

/// Grid of `N, P in {1, 2, 4, 8, 16}` and `M in {1, 4, 16}`.
pub fn default_span_points() -> Vec<(usize, usize, usize)> {
    let np = [1, 2, 4, 8, 16];
    let mut v = Vec::new();
    for &m in &[1, 4, 16] {
        for &n in &np {
            for &p in &np {
                v.push((n, m, p));
            }
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub closed_form: Vec<ClosedFormRow>,
    pub siteo_count_4_3_3: usize,
    pub spans: SpanSweep,
    pub throughput: ThroughputReport,
}

pub fn comparison_report(
    span_points: &[(usize, usize, usize)],
    span_sitems: u16,
    seed: u64,
    lane_efficiency: f64,
    fill_cycles: u64,
    batch: usize,
) -> Result<ComparisonReport, PipelineError> {
    let mut closed_form = Vec::new();
    for (n, m, p) in [(128, 128, 128), (4, 3, 3)] {
        for arch in Arch::ALL {
            closed_form.push(ClosedFormRow { arch, n, m, p, latency: latency(arch, n, m, p), resources: resources(arch, n, m, p) });
        }
    }
    Ok(ComparisonReport {
        closed_form,
        siteo_count_4_3_3: siteo_count(4, 3, 3),
        spans: matmul_span_sweep(span_points, span_sitems, seed)?,
        throughput: throughput_report(lane_efficiency, fill_cycles, batch)?,
    })
}

impl ComparisonReport {
    pub fn to_text(&self) -> String {
        let mut s = String::from("closed forms\n");
        let _ = writeln!(s, "{:<7} {:>5} {:>5} {:>5} {:>8}  resources", "arch", "n", "m", "p", "latency");
        for r in &self.closed_form {
            let res = serde_json::to_string(&r.resources).expect("resources serialize");
            let _ = writeln!(
                s,
                "{:<7} {:>5} {:>5} {:>5} {:>8}  {res}",
                format!("{:?}", r.arch).to_lowercase(),
                r.n,
                r.m,
                r.p,
                r.latency
            );
        }
        let _ = writeln!(s, "siteo_count(4,3,3) = {}\n", self.siteo_count_4_3_3);
        let _ = writeln!(s, "simulated matmul spans on {} SiteMs per fabric", self.spans.sitems);
        let _ = writeln!(s, "{:>4} {:>4} {:>4} {:>9} {:>10} {:>7} oracle", "n", "m", "p", "analytic", "simulated", "offset");
        for r in &self.spans.rows {
            let _ = writeln!(
                s,
                "{:>4} {:>4} {:>4} {:>9} {:>10} {:>7} {}",
                r.n,
                r.m,
                r.p,
                r.analytic,
                r.simulated,
                r.offset,
                if r.oracle_pass { "PASS" } else { "FAIL" }
            );
        }
        match self.spans.constant_offset {
            Some(c) => {
                let _ = writeln!(s, "c = {c}\n");
            }
            None => s.push_str("c = none (offsets differ)\n\n"),
        }
        s.push_str(&self.throughput.to_text());
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("section,key,n,m,p,analytic,simulated,offset,note\n");
        for r in &self.closed_form {
            let _ = writeln!(
                s,
                "closed_form,{},{},{},{},{},,,",
                format!("{:?}", r.arch).to_lowercase(),
                r.n,
                r.m,
                r.p,
                r.latency
            );
        }
        for r in &self.spans.rows {
            let _ = writeln!(
                s,
                "span,mipu,{},{},{},{},{},{},{}",
                r.n,
                r.m,
                r.p,
                r.analytic,
                r.simulated,
                r.offset,
                if r.oracle_pass { "PASS" } else { "FAIL" }
            );
        }
        for c in &self.throughput.rows {
            let _ = writeln!(
                s,
                "throughput,{},,,,{},{},{:.4},\"{}\"",
                c.reference.id, c.model_value, c.reference.value, c.ratio, c.reference.source
            );
        }
        let m = &self.throughput.simulated;
        let _ = writeln!(
            s,
            "throughput,simulated_cycles_per_image,,,,{},{},,\"batch of {}\"",
            m.reference_cycles_per_image, m.marginal_cycles_per_image, m.batch
        );
        s
    }
}

/// Ensures the schedule of the example network can be compiled on the
/// default fabric.
pub fn table_cnn_fits() -> bool {
    compile_cnn(&table_cnn(1), &FabricConfig::default()).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_marginal_cost() {
        let m = measure_table_cnn(8).unwrap();
        assert!(m.oracle_pass);
        assert!(m.marginal_cycles_per_image <= 16.0, "{m:?}");
        assert!((m.reference_cycles_per_image - 7.02).abs() < 0.01);
    }

    #[test]
    fn small_span_sweep_has_common_offset() {
        let s = matmul_span_sweep(&[(1, 1, 1), (2, 3, 4), (4, 1, 2)], 4, 1).unwrap();
        assert_eq!(s.constant_offset, Some(0));
        assert!(s.rows.iter().all(|r| r.oracle_pass));
    }

    #[test]
    fn reports_render() {
        assert!(table_cnn_fits());
        let r = comparison_report(&[(2, 2, 2)], 3, 0, 1.0, 0, 2).unwrap();
        let text = r.to_text();
        for needle in ["258", "389", "510", "c = 0", "142.45", "Table I", "abstract"] {
            assert!(text.contains(needle) || r.to_csv().contains(needle), "missing {needle}");
        }
    }
}
