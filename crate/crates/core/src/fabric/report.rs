use serde::Serialize;

use crate::isa::{Message, Opcode};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EgressRecord {
    pub cycle: u64,
    pub address: u16,
    pub value: f32,
    #[serde(serialize_with = "hex_word")]
    pub word: u64,
}

fn hex_word<S: serde::Serializer>(w: &u64, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(&format_args!("{w:016x}"))
}

/// Summary of one drained run. Cycle fields are absolute cycle numbers;
/// `None` when the corresponding event never happened.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    /// Last egress (or last execution when nothing egresses) minus first
    /// injection, plus one. Zero for an empty program.
    pub total_cycles: u64,
    pub first_injection_cycle: Option<u64>,
    /// Cycle of the last Prog execution.
    pub programming_end_cycle: Option<u64>,
    pub first_operation_injection_cycle: Option<u64>,
    pub last_execute_cycle: Option<u64>,
    pub last_egress_cycle: Option<u64>,
    pub programming_cycles: u64,
    pub operation_cycles: u64,
    pub offload_cycles: u64,
    /// First non-Prog injection through last egress, inclusive.
    pub operation_span: u64,
    pub injected: u64,
    /// Messages brought into existence: top-port injections, one per
    /// vertical-bus delivery, and every emission.
    pub created: u64,
    pub executed: u64,
    pub egressed: u64,
    pub hops: u64,
    pub bus_transfers: u64,
    pub stalls: u64,
    /// Most horizontal-bus lanes one SiteM row used in a single cycle.
    pub peak_row_bus_lanes: usize,
    pub max_fifo_occupancy: usize,
    pub fifo_overflows: u64,
    pub wall_time_s: f64,
    pub trace_hash: String,
    pub egress: Vec<EgressRecord>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Tally {
    pub first_inject: Option<u64>,
    pub first_op_inject: Option<u64>,
    pub last_prog: Option<u64>,
    pub last_execute: Option<u64>,
    pub last_egress: Option<u64>,
    pub injected: u64,
    pub created: u64,
    pub executed: u64,
    pub egressed: u64,
    pub hops: u64,
    pub bus_transfers: u64,
    pub stalls: u64,
    pub peak_lanes: usize,
    pub max_fifo: usize,
    pub fifo_overflows: u64,
    pub egress: Vec<EgressRecord>,
}

impl Tally {
    pub fn inject(&mut self, cycle: u64, msg: &Message) {
        self.first_inject.get_or_insert(cycle);
        if msg.opcode != Opcode::Prog {
            self.first_op_inject.get_or_insert(cycle);
        }
        self.injected += 1;
    }

    pub fn execute(&mut self, cycle: u64, msg: &Message) {
        self.executed += 1;
        self.last_execute = Some(cycle);
        if msg.opcode == Opcode::Prog {
            self.last_prog = Some(cycle);
        }
    }

    pub fn egress(&mut self, cycle: u64, msg: &Message) {
        self.egressed += 1;
        self.last_egress = Some(cycle);
        self.egress.push(EgressRecord {
            cycle,
            address: msg.dest.raw(),
            value: msg.value(),
            word: msg.encode(),
        });
    }

    pub fn into_report(self, clock_hz: f64, trace_hash: String) -> RunReport {
        let end = self.last_egress.or(self.last_execute);
        let total_cycles = match (self.first_inject, end) {
            (Some(a), Some(b)) => b + 1 - a,
            _ => 0,
        };
        let programming_cycles = match (self.first_inject, self.last_prog) {
            (Some(a), Some(b)) => b + 1 - a,
            _ => 0,
        };
        let operation_cycles = match (self.last_prog, self.last_execute) {
            (Some(p), Some(e)) => e - p,
            (None, Some(e)) => e + 1 - self.first_inject.unwrap_or(0),
            _ => 0,
        };
        let offload_cycles = match (self.last_execute, self.last_egress) {
            (Some(e), Some(g)) => g.saturating_sub(e),
            (None, Some(g)) => g + 1 - self.first_inject.unwrap_or(0),
            _ => 0,
        };
        let operation_span = match (self.first_op_inject, self.last_egress) {
            (Some(a), Some(b)) => b + 1 - a,
            _ => 0,
        };
        RunReport {
            total_cycles,
            first_injection_cycle: self.first_inject,
            programming_end_cycle: self.last_prog,
            first_operation_injection_cycle: self.first_op_inject,
            last_execute_cycle: self.last_execute,
            last_egress_cycle: self.last_egress,
            programming_cycles,
            operation_cycles,
            offload_cycles,
            operation_span,
            injected: self.injected,
            created: self.created,
            executed: self.executed,
            egressed: self.egressed,
            hops: self.hops,
            bus_transfers: self.bus_transfers,
            stalls: self.stalls,
            peak_row_bus_lanes: self.peak_lanes,
            max_fifo_occupancy: self.max_fifo,
            fifo_overflows: self.fifo_overflows,
            wall_time_s: total_cycles as f64 / clock_hz,
            trace_hash,
            egress: self.egress,
        }
    }
}

impl RunReport {
    /// Egress values ordered by (address, cycle).
    pub fn egress_by_address(&self) -> Vec<(u16, Vec<f32>)> {
        let mut recs: Vec<&EgressRecord> = self.egress.iter().collect();
        recs.sort_by_key(|r| (r.address, r.cycle));
        let mut out: Vec<(u16, Vec<f32>)> = Vec::new();
        for r in recs {
            match out.last_mut() {
                Some((a, vs)) if *a == r.address => vs.push(r.value),
                _ => out.push((r.address, vec![r.value])),
            }
        }
        out
    }
}
