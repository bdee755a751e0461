//! Closed-form latency and resource models, sweeps, and a conv throughput
//! estimate.
//!
//! Latencies are in cycles for `C = A (N x M) * B (M x P)`:
//!
//! | arch   | latency                        |
//! |--------|--------------------------------|
//! | tpu    | `N + 2M + P - 2`               |
//! | meissa | `N + M + P + ceil(log2 M) - 2` |
//! | mipu   | `N + P + 2`                    |

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{conv_output_len, ShapeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticError {
    #[error("dimensions must be at least 1")]
    ZeroDim,
    #[error("empty range {lo}..={hi}")]
    EmptyRange { lo: u64, hi: u64 },
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("reference table: {0}")]
    References(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Mipu,
    Tpu,
    Meissa,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Mipu, Arch::Meissa, Arch::Tpu];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: u64,
    pub m: u64,
    pub p: u64,
}

impl Dims {
    pub fn new(n: u64, m: u64, p: u64) -> Self {
        Self { n, m, p }
    }

    fn check(&self) -> Result<(), AnalyticError> {
        if self.n == 0 || self.m == 0 || self.p == 0 {
            return Err(AnalyticError::ZeroDim);
        }
        Ok(())
    }
}

/// `ceil(log2 x)` for `x >= 1`.
pub fn ceil_log2(x: u64) -> u64 {
    assert!(x >= 1);
    (64 - (x - 1).leading_zeros()) as u64
}

/// Cycles to multiply `N x M` by `M x P`. Panics on zero dims.
pub fn latency(arch: Arch, n: u64, m: u64, p: u64) -> u64 {
    assert!(n >= 1 && m >= 1 && p >= 1, "dimensions must be at least 1");
    match arch {
        Arch::Tpu => n + 2 * m + p - 2,
        Arch::Meissa => n + m + p + ceil_log2(m) - 2,
        Arch::Mipu => n + p + 2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Resources {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multipliers: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adders: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub siteos: Option<u64>,
}

pub fn resources(arch: Arch, n: u64, m: u64, p: u64) -> Resources {
    match arch {
        Arch::Tpu => Resources { multipliers: Some(n * p), adders: Some(m * p), siteos: None },
        Arch::Meissa => Resources { multipliers: Some(m * p), adders: Some(p * (m - 1)), siteos: None },
        Arch::Mipu => Resources { multipliers: None, adders: None, siteos: Some((n * m + n) * p) },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dim {
    N,
    M,
    P,
}

impl std::str::FromStr for Dim {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "n" => Ok(Dim::N),
            "m" => Ok(Dim::M),
            "p" => Ok(Dim::P),
            _ => Err(format!("unknown dimension '{s}', expected n, m or p")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SweepRow {
    pub n: u64,
    pub m: u64,
    pub p: u64,
    pub mipu: u64,
    pub meissa: u64,
    pub tpu: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub varied: Dim,
    pub lo: u64,
    pub hi: u64,
    pub fixed: Dims,
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_CSV_HEADER: &str = "n,m,p,mipu,meissa,tpu";

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{SWEEP_CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.n, r.m, r.p, r.mipu, r.meissa, r.tpu);
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep serializes")
    }
}

/// Powers of two inside `[lo, hi]` plus both endpoints, ascending.
pub fn sweep_points(lo: u64, hi: u64) -> Vec<u64> {
    let mut v = vec![lo];
    let mut x = 1u64;
    while x <= hi {
        if x > lo {
            v.push(x);
        }
        x = match x.checked_mul(2) {
            Some(y) => y,
            None => break,
        };
    }
    if *v.last().unwrap() != hi {
        v.push(hi);
    }
    v
}

pub fn sweep(varied: Dim, lo: u64, hi: u64, fixed: Dims) -> Result<SweepResult, AnalyticError> {
    if lo == 0 || lo > hi {
        return Err(AnalyticError::EmptyRange { lo, hi });
    }
    fixed.check()?;
    let rows = sweep_points(lo, hi)
        .into_iter()
        .map(|x| {
            let mut d = fixed;
            match varied {
                Dim::N => d.n = x,
                Dim::M => d.m = x,
                Dim::P => d.p = x,
            }
            SweepRow {
                n: d.n,
                m: d.m,
                p: d.p,
                mipu: latency(Arch::Mipu, d.n, d.m, d.p),
                meissa: latency(Arch::Meissa, d.n, d.m, d.p),
                tpu: latency(Arch::Tpu, d.n, d.m, d.p),
            }
        })
        .collect();
    Ok(SweepResult { varied, lo, hi, fixed, rows })
}

/// A batch of stride-1, unpadded convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputSpec {
    pub images: u64,
    pub height: u64,
    pub width: u64,
    pub channels: u64,
    pub kernel: u64,
    pub filters: u64,
}

/// Machine parameters of the estimate. `lane_efficiency` is the fraction
/// of SiteOs doing useful work each cycle; `fill_cycles` is added once.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputParams {
    pub siteos: u64,
    pub clock_hz: f64,
    pub lane_efficiency: f64,
    pub fill_cycles: u64,
}

impl ThroughputParams {
    pub fn new(siteos: u64, clock_hz: f64) -> Self {
        Self { siteos, clock_hz, lane_efficiency: 1.0, fill_cycles: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThroughputEstimate {
    #[serde(flatten)]
    pub spec: ThroughputSpec,
    #[serde(flatten)]
    pub params: ThroughputParams,
    /// One multiply per filter tap plus one reduction per output.
    pub ops: u64,
    pub cycles: u64,
    pub seconds: f64,
    pub images_per_second: f64,
}

/// `cycles = ceil(outputs * (taps + 1) / (siteos * lane_efficiency)) + fill`
/// where `outputs = images * filters * OH * OW` and `taps = channels * K^2`.
pub fn conv_throughput(spec: &ThroughputSpec, params: &ThroughputParams) -> Result<ThroughputEstimate, AnalyticError> {
    if spec.channels == 0 || spec.filters == 0 || params.siteos == 0 || !(params.lane_efficiency > 0.0) {
        return Err(AnalyticError::ZeroDim);
    }
    let oh = conv_output_len(spec.height as usize, spec.kernel as usize, 1, 0)? as u64;
    let ow = conv_output_len(spec.width as usize, spec.kernel as usize, 1, 0)? as u64;
    let taps = spec.channels * spec.kernel * spec.kernel;
    let ops = spec.images * spec.filters * oh * ow * (taps + 1);
    let cycles = if spec.images == 0 {
        0
    } else {
        let lanes = params.siteos as f64 * params.lane_efficiency;
        (ops as f64 / lanes).ceil() as u64 + params.fill_cycles
    };
    let seconds = cycles as f64 / params.clock_hz;
    let images_per_second = if cycles == 0 { 0.0 } else { spec.images as f64 / seconds };
    Ok(ThroughputEstimate { spec: *spec, params: *params, ops, cycles, seconds, images_per_second })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Seconds,
    ImagesPerSecond,
}

/// A published figure with its workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub id: String,
    pub label: String,
    pub source: String,
    pub metric: Metric,
    pub value: f64,
    #[serde(flatten)]
    pub workload: ThroughputSpec,
    pub siteos: u64,
    pub clock_hz: f64,
}

#[derive(Deserialize)]
struct ReferenceFile {
    reference: Vec<Reference>,
}

const REFERENCE_TOML: &str = include_str!("../../data/reference_values.toml");

pub fn reference_values() -> Vec<Reference> {
    parse_references(REFERENCE_TOML).expect("bundled reference table parses")
}

pub fn parse_references(text: &str) -> Result<Vec<Reference>, AnalyticError> {
    let f: ReferenceFile = toml::from_str(text).map_err(|e| AnalyticError::References(e.to_string()))?;
    Ok(f.reference)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub reference: Reference,
    pub estimate: ThroughputEstimate,
    /// Model value in the reference's metric.
    pub model_value: f64,
    /// `model_value / reference.value`.
    pub ratio: f64,
}

pub fn compare(reference: &Reference, lane_efficiency: f64, fill_cycles: u64) -> Result<Comparison, AnalyticError> {
    let params = ThroughputParams { siteos: reference.siteos, clock_hz: reference.clock_hz, lane_efficiency, fill_cycles };
    let estimate = conv_throughput(&reference.workload, &params)?;
    let model_value = match reference.metric {
        Metric::Seconds => estimate.seconds,
        Metric::ImagesPerSecond => estimate.images_per_second,
    };
    Ok(Comparison { reference: reference.clone(), estimate, model_value, ratio: model_value / reference.value })
}

pub const COMPARISON_CSV_HEADER: &str =
    "id,metric,reference_value,model_value,ratio,model_cycles,lane_efficiency,fill_cycles,source";

impl Comparison {
    pub fn to_csv_line(&self) -> String {
        let metric = match self.reference.metric {
            Metric::Seconds => "seconds",
            Metric::ImagesPerSecond => "images_per_second",
        };
        format!(
            "{},{},{},{},{:.4},{},{},{},\"{}\"",
            self.reference.id,
            metric,
            self.reference.value,
            self.model_value,
            self.ratio,
            self.estimate.cycles,
            self.estimate.params.lane_efficiency,
            self.estimate.params.fill_cycles,
            self.reference.source
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_form_examples() {
        assert_eq!(latency(Arch::Tpu, 128, 128, 128), 510);
        assert_eq!(latency(Arch::Meissa, 128, 128, 128), 389);
        assert_eq!(latency(Arch::Mipu, 128, 128, 128), 258);
        assert_eq!(resources(Arch::Tpu, 4, 3, 3), Resources { multipliers: Some(12), adders: Some(9), siteos: None });
        assert_eq!(resources(Arch::Meissa, 4, 3, 3), Resources { multipliers: Some(9), adders: Some(6), siteos: None });
        assert_eq!(resources(Arch::Mipu, 4, 3, 3).siteos, Some(48));
    }

    #[test]
    fn log2_ceiling() {
        let brute = |x: u64| (0..64).find(|&k| (1u64 << k) >= x).unwrap();
        for x in 1..5000 {
            assert_eq!(ceil_log2(x), brute(x), "{x}");
        }
    }

    #[test]
    fn sweep_points_include_endpoints() {
        assert_eq!(sweep_points(2, 2048), vec![2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048]);
        assert_eq!(sweep_points(3, 20), vec![3, 4, 8, 16, 20]);
        assert_eq!(sweep_points(5, 5), vec![5]);
        assert!(sweep(Dim::N, 4, 2, Dims::new(1, 1, 1)).is_err());
    }

    #[test]
    fn m_sweep_keeps_mipu_flat() {
        let s = sweep(Dim::M, 2, 2048, Dims::new(128, 128, 128)).unwrap();
        assert!(s.rows.iter().all(|r| r.mipu == 258));
    }

    #[test]
    fn p_sweep_gap() {
        let s = sweep(Dim::P, 2, 2048, Dims::new(128, 128, 128)).unwrap();
        assert!(s.rows.iter().all(|r| r.tpu - r.mipu == 252));
        assert!(s.to_csv().starts_with("n,m,p,mipu,meissa,tpu\n128,128,2,"));
    }

    #[test]
    fn zero_images_zero_cycles() {
        let spec = ThroughputSpec { images: 0, height: 8, width: 8, channels: 1, kernel: 3, filters: 2 };
        let e = conv_throughput(&spec, &ThroughputParams { fill_cycles: 10, ..ThroughputParams::new(48, 1e9) }).unwrap();
        assert_eq!((e.cycles, e.seconds), (0, 0.0));
        let bad = ThroughputSpec { kernel: 9, ..spec };
        assert!(conv_throughput(&bad, &ThroughputParams::new(48, 1e9)).is_err());
    }

    #[test]
    fn throughput_formula() {
        let spec = ThroughputSpec { images: 2, height: 5, width: 5, channels: 1, kernel: 3, filters: 4 };
        let e = conv_throughput(&spec, &ThroughputParams { fill_cycles: 3, ..ThroughputParams::new(48, 1e9) }).unwrap();
        // 2 * 4 * 9 outputs, 10 ops each, over 48 lanes.
        assert_eq!(e.ops, 720);
        assert_eq!(e.cycles, 15 + 3);
        assert!((e.seconds - 18e-9).abs() < 1e-18);
    }

    #[test]
    fn bundled_references() {
        let refs = reference_values();
        let values: Vec<f64> = refs.iter().map(|r| r.value).collect();
        assert_eq!(values, vec![0.5033, 0.7025, 0.0492, 142.45e6]);
        assert!(refs.iter().all(|r| !r.source.is_empty()));
        for r in &refs {
            let c = compare(r, 1.0, 0).unwrap();
            assert!(c.ratio.is_finite() && c.ratio > 0.0);
        }
    }

    proptest! {
        #[test]
        fn closed_form_identities(n in 1u64..5000, m in 1u64..5000, p in 1u64..5000) {
            let mipu = latency(Arch::Mipu, n, m, p);
            prop_assert_eq!(mipu, latency(Arch::Mipu, n, 1, p));
            prop_assert_eq!(latency(Arch::Tpu, n, m, p) + 4, mipu + 2 * m);
            prop_assert_eq!(latency(Arch::Meissa, n, m, p) + 4, mipu + m + ceil_log2(m));
        }

        #[test]
        fn sweeps_are_monotone(lo in 1u64..300, span in 0u64..3000, d in 0usize..3) {
            let dim = [Dim::N, Dim::M, Dim::P][d];
            let s = sweep(dim, lo, lo + span, Dims::new(64, 64, 64)).unwrap();
            prop_assert_eq!(s.rows.first().map(|r| match dim { Dim::N => r.n, Dim::M => r.m, Dim::P => r.p }), Some(lo));
            for w in s.rows.windows(2) {
                prop_assert!(w[0].mipu <= w[1].mipu && w[0].meissa <= w[1].meissa && w[0].tpu <= w[1].tpu);
            }
        }
    }
}
