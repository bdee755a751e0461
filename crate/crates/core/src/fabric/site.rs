//! Per-SiteO compute state and opcode semantics.

use std::collections::VecDeque;

use serde::Serialize;

use super::geometry::Neighbors;
use crate::isa::{Message, Opcode, SiteAddress};

/// Capacity of the per-site buffer holding generated messages that have not
/// left the site yet.
pub const INSTR_BUFFER_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContinuationMissing;

/// Register file and FPU-side state of one SiteO.
#[derive(Debug, Clone, Default)]
pub(crate) struct SiteCore {
    pub stored_bits: u32,
    pub continuation: Option<(Opcode, SiteAddress)>,
    pub arity: u32,
    pub counter: u32,
    pub acc: Option<f32>,
    pub pair_latch: Option<f32>,
}

fn max_of(a: f32, b: f32) -> f32 {
    if b > a {
        b
    } else {
        a
    }
}

fn relu(v: f32) -> f32 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

impl SiteCore {
    fn stored(&self) -> f32 {
        f32::from_bits(self.stored_bits)
    }

    fn reduces(&self, op: Opcode) -> bool {
        self.arity > 0 && op.is_reduction()
    }

    pub fn mid_reduction(&self) -> bool {
        self.acc.is_some()
    }

    /// Whether executing `msg` here produces an output message.
    pub fn would_emit(&self, msg: &Message) -> bool {
        match msg.opcode {
            Opcode::Prog | Opcode::Update => false,
            Opcode::AAdd | Opcode::ASub | Opcode::AMul | Opcode::ADiv => self.pair_latch.is_some(),
            op if self.reduces(op) => self.counter == 1 || (self.counter == 0 && self.arity == 1),
            _ => true,
        }
    }

    fn via_continuation(&self, value: f32, msg: &Message) -> Result<Message, ContinuationMissing> {
        let (opcode, dest) = self.continuation.ok_or(ContinuationMissing)?;
        Ok(Message {
            opcode,
            dest,
            value_bits: value.to_bits(),
            next_opcode: msg.next_opcode,
            next_dest: msg.next_dest,
        })
    }

    pub fn execute(&mut self, msg: &Message) -> Result<Option<Message>, ContinuationMissing> {
        let v = msg.value();
        let stationary = |op: Opcode, s: f32| match op {
            Opcode::AAddS => s + v,
            Opcode::ASubS => s - v,
            Opcode::AMulS => s * v,
            Opcode::ADivS => s / v,
            Opcode::AvAdd => (s + v) / 2.0,
            Opcode::Cmp => max_of(s, v),
            _ => unreachable!(),
        };
        match msg.opcode {
            Opcode::Prog => {
                self.stored_bits = msg.value_bits;
                self.continuation = Some((msg.next_opcode, msg.next_dest));
                self.arity = Message::header_arity(msg.value_bits).unwrap_or(0);
                self.counter = self.arity;
                self.acc = None;
                self.pair_latch = None;
                Ok(None)
            }
            Opcode::Update => {
                self.stored_bits = msg.value_bits;
                Ok(None)
            }
            Opcode::AAdd | Opcode::ASub | Opcode::AMul | Opcode::ADiv => match self.pair_latch.take() {
                None => {
                    self.pair_latch = Some(v);
                    Ok(None)
                }
                Some(first) => {
                    let r = match msg.opcode {
                        Opcode::AAdd => first + v,
                        Opcode::ASub => first - v,
                        Opcode::AMul => first * v,
                        _ => first / v,
                    };
                    Ok(Some(Message {
                        opcode: msg.next_opcode,
                        dest: msg.next_dest,
                        value_bits: r.to_bits(),
                        next_opcode: msg.next_opcode,
                        next_dest: msg.next_dest,
                    }))
                }
            },
            Opcode::Relu => self.via_continuation(relu(v), msg).map(Some),
            op if self.reduces(op) => {
                if self.continuation.is_none() {
                    return Err(ContinuationMissing);
                }
                if self.counter == 0 {
                    self.counter = self.arity;
                }
                let acc = match self.acc {
                    None => v,
                    Some(a) if op == Opcode::Cmp => max_of(a, v),
                    Some(a) => a + v,
                };
                self.counter -= 1;
                if self.counter > 0 {
                    self.acc = Some(acc);
                    return Ok(None);
                }
                self.acc = None;
                let out = if op == Opcode::AvAdd { acc / self.arity as f32 } else { acc };
                self.via_continuation(out, msg).map(Some)
            }
            op => {
                let r = stationary(op, self.stored());
                self.via_continuation(r, msg).map(Some)
            }
        }
    }
}

/// Read-only copy of one SiteO's state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiteOState {
    pub address: SiteAddress,
    pub stored_value: f32,
    pub stored_bits: u32,
    pub continuation: Option<(Opcode, SiteAddress)>,
    pub arity: u32,
    pub counter: u32,
    pub mid_reduction: bool,
    /// Generated messages waiting to leave the site.
    pub instr_buffer: Vec<Message>,
    #[serde(skip)]
    pub fifo_left: Vec<Message>,
    #[serde(skip)]
    pub fifo_top: Vec<Message>,
    pub neighbors: Neighbors,
}

/// Full per-site simulation state: compute core plus queues.
#[derive(Debug, Clone, Default)]
pub(crate) struct Site {
    pub core: SiteCore,
    pub fifo_top: VecDeque<Message>,
    pub fifo_left: VecDeque<Message>,
    /// Messages delivered by a bus, executed on the next cycle. Keyed by
    /// source for arbitration.
    pub bus_in: Vec<(u32, Message)>,
    pub out: VecDeque<Message>,
}

impl Site {
    pub fn is_idle(&self) -> bool {
        self.fifo_top.is_empty() && self.fifo_left.is_empty() && self.bus_in.is_empty() && self.out.is_empty()
    }
}
