//! Convolution block (conv, optional RELU, optional max pool) of a CNN.
//!
//! Filter `f` occupies global row `f`: weight `p = c*K*K + ky*K + kx` at
//! column `p`, followed by the adder, RELU and CMP stage sites. All filters
//! share the weight columns, so one vertical-bus message per column band
//! feeds every filter. Each cycle feeds one convolution window; windows are
//! visited pool window by pool window, which recomputes the conv outputs
//! shared by overlapping pool windows but lets each CMP site see exactly
//! its own operands.
//!
//! Dense layers and softmax run on the host from the egress features.

use super::{
    check_config, egress_address, operand, required_sitems, vbus_port, CompileError, CompiledWorkload, OutputMap,
    OutputSlot, Placed, ProgLoader, Role, Span, StaticSchedule,
};
use crate::fabric::{FabricConfig, Geometry};
use crate::isa::{Message, MessageProgram, Opcode, SiteAddress};
use crate::oracle::{conv_output_len, CnnWeights, ReductionOrder, ShapeError, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct CnnSpec {
    pub net: CnnWeights<f32>,
    /// Each `[C][H][W]`, fed back to back.
    pub images: Vec<Tensor<f32>>,
}

struct Shape {
    filters: usize,
    channels: usize,
    k: usize,
    conv: (usize, usize),
    /// Output of the block per filter.
    out: (usize, usize),
}

impl Shape {
    fn of(spec: &CnnSpec) -> Result<Self, ShapeError> {
        let &[filters, channels, k, k2] = spec.net.filters.dims() else {
            return Err(ShapeError::Mismatch("filters must be [F, C, K, K]".into()));
        };
        if k != k2 || filters == 0 {
            return Err(ShapeError::Mismatch(format!("unsupported filter bank {:?}", spec.net.filters.dims())));
        }
        let Some(first) = spec.images.first() else {
            return Err(ShapeError::Mismatch("no images".into()));
        };
        let &[c, h, w] = first.dims() else {
            return Err(ShapeError::Mismatch("images must be [C, H, W]".into()));
        };
        if c != channels || spec.images.iter().any(|i| i.dims() != first.dims()) {
            return Err(ShapeError::Mismatch(format!("images must all be [{channels}, {h}, {w}]")));
        }
        let conv = (
            conv_output_len(h, k, spec.net.stride, spec.net.pad)?,
            conv_output_len(w, k, spec.net.stride, spec.net.pad)?,
        );
        let out = match spec.net.pool {
            Some((pk, ps)) => (conv_output_len(conv.0, pk, ps, 0)?, conv_output_len(conv.1, pk, ps, 0)?),
            None => conv,
        };
        Ok(Self { filters, channels, k, conv, out })
    }

    fn taps(&self) -> usize {
        self.channels * self.k * self.k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Adder,
    Relu,
    Pool,
}

fn stages(net: &CnnWeights<f32>, taps: usize) -> Vec<Stage> {
    let mut s = Vec::new();
    if taps > 1 {
        s.push(Stage::Adder);
    }
    if net.relu {
        s.push(Stage::Relu);
    }
    if net.pool.is_some() {
        s.push(Stage::Pool);
    }
    s
}

fn stage_opcode(stage: Option<Stage>) -> Opcode {
    match stage {
        Some(Stage::Adder) => Opcode::AAddS,
        Some(Stage::Relu) => Opcode::Relu,
        Some(Stage::Pool) => Opcode::Cmp,
        None => Opcode::Update,
    }
}

fn fits(geo: &Geometry, filters: usize, width: usize) -> bool {
    filters <= geo.rows() as usize && (0..filters).all(|f| geo.row_width(f as u16) as usize >= width)
}

/// Smallest SiteM count that holds the convolution block.
pub fn cnn_min_sitems(filters: usize, taps: usize, relu: bool, pool: bool) -> Option<u16> {
    let width = taps + usize::from(taps > 1) + usize::from(relu) + usize::from(pool);
    (1..=crate::fabric::MAX_SITEMS).find(|&s| {
        fits(&Geometry::new(s), filters, width) && FabricConfig::with_sitems(s).egress_ports() as usize >= filters
    })
}

/// Conv output coordinates in feed order for one image.
fn feed_order(net: &CnnWeights<f32>, shape: &Shape) -> Vec<(usize, usize)> {
    match net.pool {
        Some((pk, ps)) => {
            let mut v = Vec::new();
            for py in 0..shape.out.0 {
                for px in 0..shape.out.1 {
                    for dy in 0..pk {
                        for dx in 0..pk {
                            v.push((py * ps + dy, px * ps + dx));
                        }
                    }
                }
            }
            v
        }
        None => (0..shape.conv.0).flat_map(|y| (0..shape.conv.1).map(move |x| (y, x))).collect(),
    }
}

pub fn compile_cnn(spec: &CnnSpec, cfg: &FabricConfig) -> Result<CompiledWorkload, CompileError> {
    let geo = check_config(cfg)?;
    let shape = Shape::of(spec)?;
    let net = &spec.net;
    let taps = shape.taps();
    let stages = stages(net, taps);
    let width = taps + stages.len();
    if !fits(&geo, shape.filters, width) || (cfg.egress_ports() as usize) < shape.filters {
        return Err(CompileError::FabricTooSmall {
            required: shape.filters * width,
            available: cfg.siteos() as usize,
        });
    }
    let at = |f: usize, col: usize| geo.at(f as u16, col as u16).expect("checked by fits");

    let mut placement = Vec::new();
    let mut loader = ProgLoader::new(geo);
    for f in 0..shape.filters {
        let egress = egress_address(cfg, f)?;
        let stage_site = |i: usize| if i < stages.len() { at(f, taps + i) } else { egress };
        let first = (stage_opcode(stages.first().copied()), stage_site(0));
        for p in 0..taps {
            let (c, ky, kx) = (p / (shape.k * shape.k), p / shape.k % shape.k, p % shape.k);
            loader.add(at(f, p), net.filters.get(&[f, c, ky, kx]), first.0, first.1);
            placement.push(Placed { role: Role::Weight { filter: f, pos: p }, site: at(f, p) });
        }
        for (i, &stage) in stages.iter().enumerate() {
            let site = at(f, taps + i);
            let next = (stage_opcode(stages.get(i + 1).copied()), stage_site(i + 1));
            let (value, role) = match stage {
                Stage::Adder => (Message::reduction_header(taps as u32), Role::Adder { filter: f }),
                Stage::Relu => (0.0, Role::Relu { filter: f }),
                Stage::Pool => {
                    let pk = net.pool.expect("pool stage").0;
                    (Message::reduction_header((pk * pk) as u32), Role::Pool { filter: f })
                }
            };
            loader.add(site, value, next.0, next.1);
            placement.push(Placed { role, site });
        }
    }
    let mut program = MessageProgram::new();
    let (last_inj, t0) = loader.emit(&mut program)?;

    let bands: Vec<usize> = (0..shape.filters.div_ceil(4)).collect();
    let order = feed_order(net, &shape);
    let (h, w) = (spec.images[0].dims()[1] as isize, spec.images[0].dims()[2] as isize);
    let mut cycle = t0;
    for image in &spec.images {
        for &(oy, ox) in &order {
            let top = (oy * net.stride) as isize - net.pad as isize;
            let left = (ox * net.stride) as isize - net.pad as isize;
            for p in 0..taps {
                let (c, ky, kx) = (p / (shape.k * shape.k), (p / shape.k % shape.k) as isize, (p % shape.k) as isize);
                let (y, x) = (top + ky, left + kx);
                let v = if (0..h).contains(&y) && (0..w).contains(&x) {
                    image.get(&[c, y as usize, x as usize])
                } else {
                    0.0
                };
                for &band in &bands {
                    let dest: SiteAddress = at(4 * band, p);
                    program.push(cycle as u32, vbus_port(dest), operand(dest, v))?;
                }
            }
            cycle += 1;
        }
    }
    // feed n multiplies on t0+n+1, each stage adds a cycle, the memory write
    // lands one cycle after the last stage.
    let last_egress = cycle - 1 + 2 + stages.len() as u64;

    let per_image = shape.out.0 * shape.out.1;
    let mut slots = Vec::new();
    for b in 0..spec.images.len() {
        for f in 0..shape.filters {
            let address = egress_address(cfg, f)?.raw();
            for i in 0..per_image {
                slots.push(OutputSlot { address, seq: b * per_image + i, index: (b * shape.filters + f) * per_image + i });
            }
        }
    }
    Ok(CompiledWorkload {
        program,
        config: cfg.clone(),
        required_sitems: required_sitems(&placement),
        placement,
        schedule: StaticSchedule {
            programming: Span { start: 0, end: last_inj },
            programmed_at: t0,
            operation: Span { start: t0, end: last_egress },
        },
        outputs: OutputMap { dims: vec![spec.images.len(), shape.filters, shape.out.0, shape.out.1], slots },
        order: ReductionOrder::Ascending,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::{build_fabric, run_program, EventKind, RunOptions, Unit};
    use crate::oracle::conv_block_ref;

    fn net(filters: Tensor<f32>, relu: bool, pool: Option<(usize, usize)>) -> CnnWeights<f32> {
        CnnWeights { filters, stride: 1, pad: 0, relu, pool, dense: vec![], softmax: false }
    }

    fn table_net() -> CnnSpec {
        CnnSpec {
            net: net(Tensor::from_fn(&[4, 1, 3, 3], |_| 1.0), true, Some((2, 1))),
            images: vec![Tensor::from_fn(&[1, 5, 5], |_| 1.0)],
        }
    }

    #[test]
    fn table_network_layout() {
        let spec = table_net();
        assert_eq!(cnn_min_sitems(4, 9, true, true), Some(3));
        let c = compile_cnn(&spec, &FabricConfig::with_sitems(3)).unwrap();
        let row0: Vec<u16> = c
            .placement
            .iter()
            .filter(|p| p.site.local_row() == 0 && p.site.sitem_index() < 16)
            .map(|p| p.site.raw())
            .collect();
        assert_eq!(row0, vec![0, 1, 2, 3, 16, 17, 18, 19, 32, 33, 34, 35]);
        assert_eq!(c.placement.len(), 48);
        assert_eq!(c.schedule.programmed_at, 4);
        let progs = c.program.injections().iter().filter(|i| i.message.opcode == Opcode::Prog).count();
        assert_eq!(progs, 48);
    }

    #[test]
    fn table_network_runs_on_schedule() {
        let spec = table_net();
        let c = compile_cnn(&spec, &FabricConfig::with_sitems(3)).unwrap();
        let mut f = build_fabric(c.config.clone()).unwrap();
        let out = run_program(&mut f, &c.program, &RunOptions::default()).unwrap();
        assert_eq!(out.report.programming_end_cycle, Some(4));
        let exec = |site: u16| -> Vec<u64> {
            out.trace
                .iter()
                .filter(|e| e.kind == EventKind::Execute && e.unit == Unit::Site(SiteAddress::new(site).unwrap()))
                .map(|e| e.cycle)
                .collect()
        };
        assert_eq!(exec(33)[..2], [4, 6]);
        assert_eq!(exec(34)[..2], [4, 7]);
        assert_eq!(exec(35)[..2], [4, 8]);
        let got = c.outputs.gather(&out.report.egress).unwrap();
        assert!(got.data().iter().all(|&v| v == 9.0));
        assert_eq!(out.report.last_egress_cycle, Some(c.schedule.operation.end));
        assert_eq!(out.report.stalls, 0);
    }

    #[test]
    fn degenerate_single_multiply() {
        let spec = CnnSpec {
            net: net(Tensor::new(&[1, 1, 1, 1], vec![1.5]).unwrap(), false, None),
            images: vec![Tensor::new(&[1, 1, 1], vec![-3.0]).unwrap()],
        };
        let c = compile_cnn(&spec, &FabricConfig::with_sitems(1)).unwrap();
        assert_eq!(c.placement.len(), 1);
        assert_eq!(c.program.len(), 2);
        let mut f = build_fabric(c.config.clone()).unwrap();
        let out = run_program(&mut f, &c.program, &RunOptions::default()).unwrap();
        assert_eq!(c.outputs.gather(&out.report.egress).unwrap().data(), &[-4.5]);
    }

    #[test]
    fn padded_strided_multichannel_matches_oracle() {
        let mut seed = 1u32;
        let mut next = || {
            seed = seed.wrapping_mul(1664525).wrapping_add(1013904223);
            (seed >> 8) as f32 / (1 << 24) as f32 * 4.0 - 2.0
        };
        let filters = Tensor::from_fn(&[3, 2, 2, 2], |_| next());
        let images = (0..2).map(|_| Tensor::from_fn(&[2, 5, 5], |_| next())).collect();
        let mut n = net(filters, true, Some((2, 2)));
        n.stride = 2;
        n.pad = 1;
        // 5 + 2 - 2 = 5 is not a multiple of 2
        let spec = CnnSpec { net: n.clone(), images };
        assert!(matches!(compile_cnn(&spec, &FabricConfig::with_sitems(3)), Err(CompileError::Shape(_))));
        n.stride = 1;
        n.pad = 1;
        let spec = CnnSpec { net: n, ..spec };
        let c = compile_cnn(&spec, &FabricConfig::with_sitems(3)).unwrap();
        let mut f = build_fabric(c.config.clone()).unwrap();
        let out = run_program(&mut f, &c.program, &RunOptions::default()).unwrap();
        let got = c.outputs.gather(&out.report.egress).unwrap();
        for (b, img) in spec.images.iter().enumerate() {
            let want = conv_block_ref(&spec.net, img).unwrap();
            let per = want.len();
            let slice = &got.data()[b * per..(b + 1) * per];
            assert!(slice.iter().zip(want.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn too_small_fabric() {
        let spec = table_net();
        assert!(matches!(
            compile_cnn(&spec, &FabricConfig::with_sitems(2)),
            Err(CompileError::FabricTooSmall { .. })
        ));
    }
}
