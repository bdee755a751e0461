use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use super::report::{RunReport, Tally};
use super::site::{Site, INSTR_BUFFER_LEN};
use super::trace::{EventKind, HashSink, TraceEvent, TraceSink, Unit};
use super::{Direction, Fabric, RouteDecision, SimError};
use crate::isa::{Injection, Message, MessageProgram, PortId, SiteAddress, ADDRESS_SPACE};

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// A run still holding messages after this many cycles is reported as
    /// a deadlock.
    pub cycle_budget: u64,
    /// Keep the full event list in [`RunOutput::trace`].
    pub keep_trace: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { cycle_budget: 1_000_000, keep_trace: true }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub trace: Vec<TraceEvent>,
}

/// Resets `fabric` and runs `program` until the fabric drains.
pub fn run_program(
    fabric: &mut Fabric,
    program: &MessageProgram,
    opts: &RunOptions,
) -> Result<RunOutput, SimError> {
    let mut trace = Vec::new();
    let report = if opts.keep_trace {
        run_program_with_sink(fabric, program, opts, &mut trace)?
    } else {
        run_program_with_sink(fabric, program, opts, &mut super::NullSink)?
    };
    Ok(RunOutput { report, trace })
}

pub fn run_program_with_sink(
    fabric: &mut Fabric,
    program: &MessageProgram,
    opts: &RunOptions,
    sink: &mut dyn TraceSink,
) -> Result<RunReport, SimError> {
    let end = run_to_end(fabric, program, opts, sink)?;
    match end.deadlock {
        Some((cycle, reason)) => Err(SimError::DeadlockDetected { cycle, reason }),
        None => Ok(end.report),
    }
}

/// How a run stopped. `report` covers everything simulated up to the stop.
#[derive(Debug, Clone)]
pub struct RunEnd {
    pub report: RunReport,
    /// Messages still queued when the run stopped; zero when drained.
    pub in_flight: u64,
    /// `(cycle, reason)` when the run stopped without draining cleanly.
    pub deadlock: Option<(u64, String)>,
}

/// Resets `fabric` and runs `program` until it drains or stops making
/// progress. Only program and continuation errors are returned as `Err`.
pub fn run_to_end(
    fabric: &mut Fabric,
    program: &MessageProgram,
    opts: &RunOptions,
    sink: &mut dyn TraceSink,
) -> Result<RunEnd, SimError> {
    fabric.reset();
    let mut sim = Simulation::new(fabric, program)?;
    let mut deadlock = None;
    while !sim.is_drained() {
        if sim.cycle() >= opts.cycle_budget {
            deadlock = Some((sim.cycle(), format!("cycle budget of {} exhausted", opts.cycle_budget)));
            break;
        }
        let progressed = sim.step_into(sink)?;
        if !progressed && !sim.has_future_injections() {
            deadlock = Some((sim.cycle() - 1, "no message can move".into()));
            break;
        }
    }
    if deadlock.is_none() {
        if let Some(site) = sim.fabric.sites.iter().position(|s| s.core.mid_reduction()) {
            deadlock = Some((sim.cycle(), format!("site {site} drained mid-reduction")));
        }
    }
    let in_flight = sim.in_flight();
    Ok(RunEnd { report: sim.finish(), in_flight, deadlock })
}

/// A fabric ingress/FIFO transfer requested in phase A.
struct Forward {
    site: usize,
    from_top: bool,
    route: RouteDecision,
}

/// Step-wise driver. Does not reset the fabric, so state programmed by an
/// earlier simulation is kept.
pub struct Simulation<'f> {
    fabric: &'f mut Fabric,
    ports: BTreeMap<PortId, VecDeque<Injection>>,
    cycle: u64,
    /// Memory writes granted last cycle, retired this cycle.
    in_flight_egress: Vec<Message>,
    tally: Tally,
    hash: HashSink,
    events: Vec<TraceEvent>,
}

fn site_addr(i: usize) -> SiteAddress {
    SiteAddress::new(i as u16).expect("site index within address space")
}

impl<'f> Simulation<'f> {
    pub fn new(fabric: &'f mut Fabric, program: &MessageProgram) -> Result<Self, SimError> {
        fabric.validate_program(program)?;
        let mut ports: BTreeMap<PortId, VecDeque<Injection>> = BTreeMap::new();
        for inj in program.injections() {
            ports.entry(inj.port).or_default().push_back(*inj);
        }
        Ok(Self {
            fabric,
            ports,
            cycle: 0,
            in_flight_egress: Vec::new(),
            tally: Tally::default(),
            hash: HashSink::default(),
            events: Vec::new(),
        })
    }

    /// The cycle the next call to [`Simulation::step`] will simulate.
    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn fabric(&self) -> &Fabric {
        self.fabric
    }

    pub fn is_drained(&self) -> bool {
        self.ports.values().all(VecDeque::is_empty)
            && self.in_flight_egress.is_empty()
            && self.fabric.sites.iter().all(Site::is_idle)
    }

    /// Messages created but not yet executed or egressed: queued in FIFOs,
    /// bus inputs and output queues, or on their way to memory.
    pub fn in_flight(&self) -> u64 {
        let queued: usize = self
            .fabric
            .sites
            .iter()
            .map(|s| s.fifo_top.len() + s.fifo_left.len() + s.bus_in.len() + s.out.len())
            .sum();
        (queued + self.in_flight_egress.len()) as u64
    }

    pub fn has_future_injections(&self) -> bool {
        self.ports
            .values()
            .any(|q| q.front().is_some_and(|i| i.cycle as u64 >= self.cycle))
    }

    /// Simulates one cycle and returns its events.
    pub fn step(&mut self) -> Result<Vec<TraceEvent>, SimError> {
        let mut events = Vec::new();
        self.step_into(&mut events)?;
        Ok(events)
    }

    /// Simulates one cycle, feeding its events to `sink`. Returns whether
    /// anything other than a stall happened.
    pub fn step_into(&mut self, sink: &mut dyn TraceSink) -> Result<bool, SimError> {
        self.events.clear();
        let t = self.cycle;
        for msg in std::mem::take(&mut self.in_flight_egress) {
            self.tally.egress(t, &msg);
            self.push_event(Unit::Memory(msg.dest.raw()), EventKind::Egress, &msg);
        }
        let forwards = self.phase_a()?;
        self.phase_b(forwards);
        let depth = self.fabric.cfg.fifo_depth;
        for s in &self.fabric.sites {
            let occ = s.fifo_left.len().max(s.fifo_top.len());
            self.tally.max_fifo = self.tally.max_fifo.max(occ);
            if occ > depth {
                self.tally.fifo_overflows += 1;
            }
        }
        let mut progressed = false;
        for e in &self.events {
            self.hash.record(e);
            sink.record(e);
            progressed |= e.kind != EventKind::StallBackpressure;
        }
        self.cycle += 1;
        Ok(progressed)
    }

    pub fn finish(self) -> RunReport {
        let clock = self.fabric.cfg.clock_hz;
        self.tally.into_report(clock, self.hash.finish())
    }

    fn push_event(&mut self, unit: Unit, kind: EventKind, msg: &Message) {
        if kind == EventKind::StallBackpressure {
            self.tally.stalls += 1;
        }
        self.events.push(TraceEvent { cycle: self.cycle, unit, kind, word: msg.encode() });
    }

    /// Executes `msg` at site `i` unless its output could not be buffered.
    /// Returns false when the message has to wait.
    fn try_execute(&mut self, i: usize, msg: &Message) -> Result<bool, SimError> {
        let t = self.cycle;
        let site = &mut self.fabric.sites[i];
        if site.out.len() >= INSTR_BUFFER_LEN && site.core.would_emit(msg) {
            self.push_event(Unit::Site(site_addr(i)), EventKind::StallBackpressure, msg);
            return Ok(false);
        }
        let emitted = site.core.execute(msg).map_err(|_| SimError::ContinuationMissing {
            site: site_addr(i),
            cycle: t,
            opcode: msg.opcode,
        })?;
        if let Some(out) = emitted {
            site.out.push_back(out);
        }
        self.tally.execute(t, msg);
        self.push_event(Unit::Site(site_addr(i)), EventKind::Execute, msg);
        if let Some(out) = emitted {
            self.tally.created += 1;
            self.push_event(Unit::Site(site_addr(i)), EventKind::Emit, &out);
        }
        Ok(true)
    }

    /// Every site consumes what it held at the start of the cycle.
    fn phase_a(&mut self) -> Result<Vec<Forward>, SimError> {
        let mut forwards = Vec::new();
        for i in 0..self.fabric.sites.len() {
            if self.fabric.sites[i].is_idle() {
                continue;
            }
            let here = site_addr(i);
            let mut inputs = std::mem::take(&mut self.fabric.sites[i].bus_in);
            inputs.sort_by_key(|(key, _)| *key);
            let mut held = Vec::new();
            for (key, msg) in inputs {
                if !self.try_execute(i, &msg)? {
                    held.push((key, msg));
                }
            }
            self.fabric.sites[i].bus_in = held;

            for from_top in [true, false] {
                let site = &self.fabric.sites[i];
                let head = if from_top { site.fifo_top.front() } else { site.fifo_left.front() };
                let Some(msg) = head.copied() else { continue };
                match self.fabric.route(here, &msg) {
                    RouteDecision::ExecuteHere => {
                        if self.try_execute(i, &msg)? {
                            let site = &mut self.fabric.sites[i];
                            if from_top {
                                site.fifo_top.pop_front();
                            } else {
                                site.fifo_left.pop_front();
                            }
                        }
                    }
                    route => forwards.push(Forward { site: i, from_top, route }),
                }
            }
        }
        Ok(forwards)
    }

    fn phase_b(&mut self, forwards: Vec<Forward>) {
        let mut arb = Arbiter::new(self.fabric);
        for fw in forwards {
            let site = &self.fabric.sites[fw.site];
            let msg = if fw.from_top { site.fifo_top[0] } else { site.fifo_left[0] };
            if self.transfer(&mut arb, fw.site, fw.route, &msg) {
                let site = &mut self.fabric.sites[fw.site];
                if fw.from_top {
                    site.fifo_top.pop_front();
                } else {
                    site.fifo_left.pop_front();
                }
            } else {
                self.push_event(Unit::Site(site_addr(fw.site)), EventKind::StallBackpressure, &msg);
            }
        }

        for i in 0..self.fabric.sites.len() {
            while let Some(msg) = self.fabric.sites[i].out.front().copied() {
                let route = self.fabric.route_emission(site_addr(i), &msg);
                if !self.transfer(&mut arb, i, route, &msg) {
                    self.push_event(Unit::Site(site_addr(i)), EventKind::StallBackpressure, &msg);
                    break;
                }
                self.fabric.sites[i].out.pop_front();
            }
        }

        let ports: Vec<PortId> = self.ports.keys().copied().collect();
        for port in ports {
            let Some(inj) = self.ports[&port].front().copied() else { continue };
            if inj.cycle as u64 > self.cycle {
                continue;
            }
            if self.inject(&mut arb, &inj) {
                self.ports.get_mut(&port).unwrap().pop_front();
            } else {
                self.push_event(Unit::Port(port), EventKind::StallBackpressure, &inj.message);
            }
        }
    }

    /// Moves `msg` out of site `i` along `route` if the resources are free.
    fn transfer(&mut self, arb: &mut Arbiter, i: usize, route: RouteDecision, msg: &Message) -> bool {
        let here = site_addr(i);
        let geo = self.fabric.geo;
        match route {
            RouteDecision::StreamRight | RouteDecision::StreamDown => {
                let dir = if route == RouteDecision::StreamRight { Direction::Right } else { Direction::Down };
                let next = match dir {
                    Direction::Right => geo.right_link(here),
                    Direction::Down => geo.down_link(here),
                } .raw() as usize;
                let depth = self.fabric.cfg.fifo_depth;
                let target = &mut self.fabric.sites[next];
                let fifo = if dir == Direction::Right { &mut target.fifo_left } else { &mut target.fifo_top };
                if fifo.len() >= depth || !arb.links.insert((i, dir)) {
                    return false;
                }
                fifo.push_back(*msg);
                self.tally.hops += 1;
                self.push_event(Unit::Site(here), EventKind::Hop, msg);
                true
            }
            RouteDecision::Bus => {
                let dest = msg.dest.raw() as usize;
                let (row, _) = geo.coords(here);
                let lanes = arb.row_lanes.entry((row, here.sitem_index())).or_insert(0);
                if *lanes >= self.fabric.cfg.buses_per_row || arb.bus_blocked[dest] {
                    return false;
                }
                *lanes += 1;
                self.tally.peak_lanes = self.tally.peak_lanes.max(*lanes);
                self.fabric.sites[dest].bus_in.push((i as u32, *msg));
                self.tally.bus_transfers += 1;
                self.push_event(Unit::Site(msg.dest), EventKind::BusTx, msg);
                true
            }
            RouteDecision::Egress => {
                let width = arb.egress_width.entry(here.sitem_index()).or_insert(0);
                if *width >= self.fabric.cfg.sitem_egress_width || !arb.memory.insert(msg.dest.raw()) {
                    return false;
                }
                *width += 1;
                self.in_flight_egress.push(*msg);
                true
            }
            RouteDecision::ExecuteHere => unreachable!("executed in phase A"),
        }
    }

    fn inject(&mut self, arb: &mut Arbiter, inj: &Injection) -> bool {
        let msg = inj.message;
        match inj.port {
            PortId::Top { col } => {
                let target = self.fabric.geo.at(0, col).expect("validated port").raw() as usize;
                let depth = self.fabric.cfg.fifo_depth;
                let fifo = &mut self.fabric.sites[target].fifo_top;
                if fifo.len() >= depth {
                    return false;
                }
                fifo.push_back(msg);
                self.tally.created += 1;
                self.tally.inject(self.cycle, &msg);
                self.push_event(Unit::Port(inj.port), EventKind::Inject, &msg);
                true
            }
            PortId::VBus { .. } => {
                let targets = self.vbus_targets(msg.dest);
                if targets.iter().any(|&s| arb.bus_blocked[s]) {
                    return false;
                }
                self.tally.inject(self.cycle, &msg);
                self.push_event(Unit::Port(inj.port), EventKind::Inject, &msg);
                let key = ADDRESS_SPACE as u32 + inj.port.to_bits() as u32;
                for s in targets {
                    let copy = Message { dest: site_addr(s), ..msg };
                    self.fabric.sites[s].bus_in.push((key, copy));
                    self.tally.created += 1;
                    self.tally.bus_transfers += 1;
                    self.push_event(Unit::Site(copy.dest), EventKind::BusTx, &copy);
                }
                true
            }
        }
    }

    /// The addressed site plus every programmed site below it in the same
    /// SiteM column.
    fn vbus_targets(&self, dest: SiteAddress) -> Vec<usize> {
        let mut out = vec![dest.raw() as usize];
        for row in dest.local_row() + 1..4 {
            let s = SiteAddress::from_parts(dest.sitem_index(), row, dest.local_col())
                .expect("same SiteM");
            if self.fabric.sites[s.raw() as usize].core.continuation.is_some() {
                out.push(s.raw() as usize);
            }
        }
        out
    }
}

/// Per-cycle resource accounting for phase B.
struct Arbiter {
    links: HashSet<(usize, Direction)>,
    row_lanes: HashMap<(u16, u16), usize>,
    egress_width: HashMap<u16, usize>,
    memory: HashSet<u16>,
    /// Sites still holding bus deliveries after phase A accept no new ones.
    bus_blocked: Vec<bool>,
}

impl Arbiter {
    fn new(fabric: &Fabric) -> Self {
        Self {
            links: HashSet::new(),
            row_lanes: HashMap::new(),
            egress_width: HashMap::new(),
            memory: HashSet::new(),
            bus_blocked: fabric.sites.iter().map(|s| !s.bus_in.is_empty()).collect(),
        }
    }
}
