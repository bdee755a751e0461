//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! | # | check |
//! |---|-------|
//! | 1 | closed-form latencies and SiteO count |
//! | 2 | latency sweeps over n, m, p in [2, 2048]: mipu < meissa < tpu, flat mipu over m |
//! | 3 | cycle schedule of the example CNN on 3 SiteMs |
//! | 4 | simulator egress equals the oracle bitwise on random matmuls and conv blocks |
//! | 5 | simulated matmul spans equal N + P + 2 + c for one constant c |
//! | 6 | determinism, FIFO bounds and conservation on random programs |
//! | 7 | throughput report: four published figures with citations and ratios, batch marginal cost |

mod common;

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use mipu::analytic::{latency, sweep, Arch, Dim, Dims};
use mipu::compiler::{
    cnn_min_sitems, compile_cnn, compile_matmul_blocks, load_workload, matmul_min_sitems, merge_block_outputs, siteo_count, CnnSpec,
    MatMulMode, MatMulSpec, Role, Workload,
};
use mipu::fabric::{build_fabric, run_program, run_to_end, EventKind, FabricConfig, HashSink, RunOptions, Unit};
use mipu::isa::{Message, Opcode};
use mipu::oracle::{conv_block_ref, matmul_ref, CnnWeights, ReductionOrder, Tensor};
use mipu::report::measure_table_cnn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn crate_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn criterion_1() -> Verdict {
    let got = [
        latency(Arch::Tpu, 128, 128, 128),
        latency(Arch::Meissa, 128, 128, 128),
        latency(Arch::Mipu, 128, 128, 128),
        siteo_count(4, 3, 3) as u64,
    ];
    // N + 2M + P - 2, N + M + P + log2 M - 2, N + P + 2, (N*M + N)*P.
    let want = [128 + 256 + 128 - 2, 128 + 128 + 128 + 7 - 2, 128 + 128 + 2, (12 + 4) * 3];
    verdict(got == want, format!("tpu={} meissa={} mipu={} siteos(4,3,3)={}", got[0], got[1], got[2], got[3]))
}

/// Points where the ordering fails, per varied dim, over `[lo, 2048]`.
fn ordering_violations(lo: u64) -> (Vec<String>, bool) {
    let mut bad = Vec::new();
    let mut flat = true;
    for dim in [Dim::N, Dim::M, Dim::P] {
        let s = sweep(dim, lo, 2048, Dims::new(128, 128, 128)).unwrap();
        for r in &s.rows {
            if !(r.mipu < r.meissa && r.meissa < r.tpu) {
                bad.push(format!("{dim:?}: n={} m={} p={} mipu={} meissa={} tpu={}", r.n, r.m, r.p, r.mipu, r.meissa, r.tpu));
            }
        }
        if dim == Dim::M {
            flat = s.rows.iter().all(|r| r.mipu == s.rows[0].mipu);
        }
    }
    (bad, flat)
}

fn criterion_2() -> Verdict {
    let (bad, flat) = ordering_violations(2);
    let (bad4, flat4) = ordering_violations(4);
    println!(
        "info [2] from 4 to 2048 instead: {} ordering violations, mipu flat over m: {flat4}",
        bad4.len()
    );
    let detail = if bad.is_empty() {
        format!("ordering holds at every point, mipu flat over m: {flat}")
    } else {
        format!("{} violation(s): {}; mipu flat over m: {flat}", bad.len(), bad.join("; "))
    };
    verdict(bad.is_empty() && flat, detail)
}

fn criterion_3() -> Verdict {
    let w = load_workload(&crate_dir().join("data/workloads/table1_cnn.toml")).unwrap();
    let Workload::Cnn { spec, .. } = w else { panic!("table1_cnn.toml is a cnn workload") };
    let cfg = FabricConfig::default();
    let c = compile_cnn(&spec, &cfg).unwrap();
    let mut f = build_fabric(cfg).unwrap();
    let out = run_program(&mut f, &c.program, &RunOptions::default()).unwrap();
    let site_of = |want: Role| c.placement.iter().find(|p| p.role == want).map(|p| p.site).unwrap();
    let weights0: Vec<_> = c
        .placement
        .iter()
        .filter(|p| matches!(p.role, Role::Weight { filter: 0, .. }))
        .map(|p| Unit::Site(p.site))
        .collect();
    let at = |kind: EventKind, unit: Unit| -> Vec<u64> {
        out.trace.iter().filter(|e| e.kind == kind && e.unit == unit).map(|e| e.cycle).collect()
    };
    let opcode = |w: u64| Message::decode(w).unwrap().opcode;
    let muls_at_5 = out
        .trace
        .iter()
        .filter(|e| e.kind == EventKind::Execute && e.cycle == 5 && weights0.contains(&e.unit) && opcode(e.word) == Opcode::AMulS)
        .count();
    let last_prog = out.report.programming_end_cycle;
    let adder = Unit::Site(site_of(Role::Adder { filter: 0 }));
    let relu = Unit::Site(site_of(Role::Relu { filter: 0 }));
    let pool = Unit::Site(site_of(Role::Pool { filter: 0 }));
    let first_op = |unit: Unit| {
        out.trace
            .iter()
            .find(|e| e.kind == EventKind::Execute && e.unit == unit && opcode(e.word) != Opcode::Prog)
            .map(|e| e.cycle)
    };
    let reduce_emit = at(EventKind::Emit, adder).first().copied();
    let relu_exec = first_op(relu);
    let cmp_exec = first_op(pool);
    let pass = last_prog == Some(4)
        && muls_at_5 == 9
        && reduce_emit == Some(6)
        && relu_exec == Some(7)
        && cmp_exec == Some(8);
    verdict(
        pass,
        format!(
            "last Prog CC{}, {} A_MULS at CC5, reduction emit CC{}, RELU CC{}, CMP CC{}",
            last_prog.unwrap_or(0),
            muls_at_5,
            reduce_emit.unwrap_or(0),
            relu_exec.unwrap_or(0),
            cmp_exec.unwrap_or(0)
        ),
    )
}

fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(dims, |_| rng.gen_range(-4.0f32..4.0))
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0004);
    let opts = RunOptions { keep_trace: false, ..RunOptions::default() };
    let mut matmul_ok = 0;
    let matmuls = 120;
    for _ in 0..matmuls {
        let (n, m, p) = (rng.gen_range(1..=8), rng.gen_range(1..=8), rng.gen_range(1..=8));
        let spec = MatMulSpec::new(random_tensor(&mut rng, &[n, m]), random_tensor(&mut rng, &[m, p]), MatMulMode::Parallel).unwrap();
        // At least one output column must fit; wider outputs split into blocks.
        let floor = matmul_min_sitems(n, m, 1, MatMulMode::Parallel).unwrap();
        let cfg = FabricConfig::with_sitems(floor + rng.gen_range(0..=16));
        let blocks = compile_matmul_blocks(&spec, &cfg).unwrap();
        let records: Vec<_> = blocks
            .iter()
            .map(|b| run_program(&mut build_fabric(b.config.clone()).unwrap(), &b.program, &opts).unwrap().report.egress)
            .collect();
        let got = merge_block_outputs(&blocks, &records).unwrap();
        let want = matmul_ref(spec.a(), spec.b(), &ReductionOrder::Ascending).unwrap();
        matmul_ok += usize::from(got.bit_eq(&want));
    }
    let mut conv_ok = 0;
    let convs = 30;
    for _ in 0..convs {
        let (f, ch, k) = (rng.gen_range(1..=4), rng.gen_range(1..=2), rng.gen_range(1..=3));
        let pad = rng.gen_range(0..=1);
        let size = k + rng.gen_range(0..=4);
        let conv = size + 2 * pad - k + 1;
        let pool = (conv >= 2 && rng.gen_bool(0.5)).then_some((2, 1));
        let relu = rng.gen_bool(0.7);
        let net = CnnWeights { filters: random_tensor(&mut rng, &[f, ch, k, k]), stride: 1, pad, relu, pool, dense: vec![], softmax: false };
        let images: Vec<_> = (0..rng.gen_range(1..=3)).map(|_| random_tensor(&mut rng, &[ch, size, size])).collect();
        let spec = CnnSpec { net, images };
        let sitems = cnn_min_sitems(f, ch * k * k, relu, pool.is_some()).unwrap();
        let c = compile_cnn(&spec, &FabricConfig::with_sitems(sitems)).unwrap();
        let r = run_program(&mut build_fabric(c.config.clone()).unwrap(), &c.program, &opts).unwrap().report;
        let got = c.outputs.gather(&r.egress).unwrap();
        let mut want = Vec::new();
        for img in &spec.images {
            want.extend_from_slice(conv_block_ref(&spec.net, img).unwrap().data());
        }
        conv_ok += usize::from(got.bit_eq(&Tensor::new(got.dims(), want).unwrap()));
    }
    verdict(
        matmul_ok == matmuls && conv_ok == convs,
        format!("{matmul_ok}/{matmuls} matmuls and {conv_ok}/{convs} conv blocks bitwise equal"),
    )
}

fn criterion_5() -> Verdict {
    let sitems = 240;
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0005);
    let opts = RunOptions { keep_trace: false, ..RunOptions::default() };
    let mut offsets = Vec::new();
    let np = [1usize, 2, 4, 8, 16];
    for m in [1usize, 4, 16] {
        for n in np {
            for p in np {
                let spec = MatMulSpec::new(random_tensor(&mut rng, &[n, m]), random_tensor(&mut rng, &[m, p]), MatMulMode::Parallel).unwrap();
                let blocks = compile_matmul_blocks(&spec, &FabricConfig::with_sitems(sitems)).unwrap();
                let (mut first, mut last) = (u64::MAX, 0);
                for b in &blocks {
                    let r = run_program(&mut build_fabric(b.config.clone()).unwrap(), &b.program, &opts).unwrap().report;
                    first = first.min(r.first_operation_injection_cycle.unwrap());
                    last = last.max(r.last_egress_cycle.unwrap());
                }
                offsets.push(((n, m, p), (last + 1 - first) as i64 - (n + p + 2) as i64));
            }
        }
    }
    let c = offsets[0].1;
    let odd: Vec<_> = offsets.iter().filter(|o| o.1 != c).collect();
    verdict(
        odd.is_empty() && c >= 0,
        if odd.is_empty() {
            format!("c = {c} at all {} points", offsets.len())
        } else {
            format!("offsets differ: first c = {c}, then {odd:?}")
        },
    )
}

fn criterion_6() -> Verdict {
    let runs = 1000;
    let (mut same_hash, mut no_overflow, mut conserved, mut stuck) = (0, 0, 0, 0);
    for seed in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0006 ^ seed);
        let cfg = common::random_config(&mut rng);
        let program = common::random_program(&mut rng, &cfg);
        let opts = RunOptions { keep_trace: false, ..RunOptions::default() };
        let run = || {
            let mut sink = HashSink::default();
            let end = run_to_end(&mut build_fabric(cfg.clone()).unwrap(), &program, &opts, &mut sink).unwrap();
            (end, sink.finish())
        };
        let (a, ha) = run();
        let (b, hb) = run();
        same_hash += usize::from(ha == hb && a.report.trace_hash == b.report.trace_hash && ha == a.report.trace_hash);
        no_overflow += usize::from(a.report.fifo_overflows == 0 && a.report.max_fifo_occupancy <= cfg.fifo_depth);
        let r = &a.report;
        conserved += usize::from(r.created == r.executed + r.egressed + a.in_flight);
        stuck += usize::from(a.deadlock.is_some());
    }
    let n = runs as usize;
    verdict(
        same_hash == n && no_overflow == n && conserved == n,
        format!(
            "{same_hash}/{n} identical hashes, {no_overflow}/{n} without overflow, {conserved}/{n} conserved ({stuck} stopped by the deadlock detector, counted with their queued messages)"
        ),
    )
}

fn criterion_7() -> Verdict {
    let out = Command::new(env!("CARGO_BIN_EXE_mipu")).args(["throughput", "--format", "text"]).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    print!("{text}");
    let figures = ["503.3 ms", "702.5 ms", "49.2 ms", "142.45e6"];
    let citations = ["abstract", "section V.A", "Table I"];
    let rows_with_ratio = text
        .lines()
        .filter(|l| figures.iter().any(|f| l.contains(f)))
        .filter(|l| l.split_whitespace().any(|t| t.contains('.') && t.parse::<f64>().is_ok()))
        .count();
    let has_all = figures.iter().all(|f| text.contains(f)) && citations.iter().all(|c| text.contains(c));
    let printed_cycles = text.contains("cycles/image");
    let m = measure_table_cnn(64).unwrap();
    let pass = out.status.success() && has_all && rows_with_ratio == 4 && printed_cycles && m.oracle_pass && m.marginal_cycles_per_image <= 16.0;
    verdict(
        pass,
        format!(
            "figures and citations present: {has_all}, rows with ratio: {rows_with_ratio}/4, batch of 64: {:.2} cycles/image marginal (bound 16, reference {:.2})",
            m.marginal_cycles_per_image, m.reference_cycles_per_image
        ),
    )
}

type Check = fn() -> Verdict;

fn main() -> ExitCode {
    let criteria: [(&str, Check); 7] = [
        ("closed-form exactness", criterion_1),
        ("latency sweep ordering", criterion_2),
        ("example CNN schedule", criterion_3),
        ("oracle equivalence", criterion_4),
        ("matmul span slope", criterion_5),
        ("determinism and safety", criterion_6),
        ("throughput comparison report", criterion_7),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = check();
        failed += usize::from(!v.pass);
        println!(
            "{} [{}] {name}: {} ({:.2}s)",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
