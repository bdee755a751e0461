#![allow(dead_code)]

use mipu::fabric::{FabricConfig, Geometry};
use mipu::isa::{Message, MessageProgram, Opcode, PortId, SiteAddress};
use rand::seq::SliceRandom;
use rand::Rng;

/// Gap between the last Prog injection and the first operand, large enough
/// for every Prog to land before anything reads it.
pub const PROG_SETTLE: u32 = 400;

pub fn random_config<R: Rng>(rng: &mut R) -> FabricConfig {
    FabricConfig {
        sitems: rng.gen_range(1..=6),
        fifo_depth: rng.gen_range(1..=4),
        buses_per_row: rng.gen_range(1..=4),
        buses_per_col: rng.gen_range(1..=4),
        sitem_egress_width: rng.gen_range(1..=12),
        clock_hz: 1e8,
    }
}

/// Pushes at the first cycle from `cycle` on where `port` is free.
fn push_free(program: &mut MessageProgram, mut cycle: u32, port: PortId, msg: Message) -> u32 {
    while program.push(cycle, port, msg).is_err() {
        cycle += 1;
    }
    cycle
}

fn finite<R: Rng>(rng: &mut R) -> f32 {
    // Small magnitudes, never a reduction header.
    (rng.gen_range(-64i32..64) as f32) * 0.125
}

fn top_port<R: Rng>(rng: &mut R, geo: &Geometry) -> PortId {
    PortId::Top { col: rng.gen_range(0..geo.row_width(0)) }
}

/// A program that drains: every programmed site forwards either to a site
/// later in the chain order or to an egress address, and operands start
/// only after programming has settled.
pub fn random_program<R: Rng>(rng: &mut R, cfg: &FabricConfig) -> MessageProgram {
    let geo = Geometry::new(cfg.sitems);
    let siteos = cfg.siteos();
    let mut ids: Vec<u16> = (0..siteos).collect();
    ids.shuffle(rng);
    ids.truncate(rng.gen_range(1..=12.min(siteos as usize)));
    let sites: Vec<SiteAddress> = ids.iter().map(|&i| SiteAddress::new(i).unwrap()).collect();
    let conts = [Opcode::AAddS, Opcode::ASubS, Opcode::AMulS, Opcode::ADivS, Opcode::Relu, Opcode::Cmp, Opcode::AvAdd, Opcode::Update];
    let mut program = MessageProgram::new();
    let mut last_prog = 0;
    for (i, &site) in sites.iter().enumerate() {
        let later = &sites[i + 1..];
        let dest = if later.is_empty() || rng.gen_bool(0.4) {
            SiteAddress::new(rng.gen_range(cfg.egress_base()..4096)).unwrap()
        } else {
            *later.choose(rng).unwrap()
        };
        let op = if dest.raw() >= cfg.egress_base() { Opcode::Update } else { *conts.choose(rng).unwrap() };
        let msg = Message::new(Opcode::Prog, site, finite(rng), op, dest);
        let cycle = push_free(&mut program, rng.gen_range(0..8), top_port(rng, &geo), msg);
        last_prog = last_prog.max(cycle);
    }
    let ops = [Opcode::AAddS, Opcode::AMulS, Opcode::ASubS, Opcode::Relu, Opcode::Cmp, Opcode::AvAdd, Opcode::Update];
    for _ in 0..rng.gen_range(1..=24) {
        let dest = *sites.choose(rng).unwrap();
        let msg = Message::new(*ops.choose(rng).unwrap(), dest, finite(rng), Opcode::Prog, SiteAddress::default());
        let cycle = last_prog + PROG_SETTLE + rng.gen_range(0..20);
        let port = if rng.gen_bool(0.5) {
            top_port(rng, &geo)
        } else {
            PortId::VBus {
                sitem: dest.sitem_index(),
                col: dest.local_col(),
                bus: rng.gen_range(0..cfg.buses_per_col as u8),
            }
        };
        push_free(&mut program, cycle, port, msg);
    }
    program
}
