use std::fmt;
use std::io::{self, Write};

use serde::{Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::isa::{hex_string, PortId, SiteAddress};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Unit {
    Site(SiteAddress),
    Port(PortId),
    /// Memory-mapped egress address.
    Memory(u16),
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Unit::Site(a) => write!(f, "site:{a}"),
            Unit::Port(p) => write!(f, "port:{p}"),
            Unit::Memory(a) => write!(f, "mem:{a}"),
        }
    }
}

impl Serialize for Unit {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Inject,
    Hop,
    BusTx,
    Execute,
    Emit,
    StallBackpressure,
    Egress,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Inject => "inject",
            EventKind::Hop => "hop",
            EventKind::BusTx => "bus_tx",
            EventKind::Execute => "execute",
            EventKind::Emit => "emit",
            EventKind::StallBackpressure => "stall_backpressure",
            EventKind::Egress => "egress",
        }
    }
}

/// One trace record. `word` is the 64-bit message image involved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub cycle: u64,
    pub unit: Unit,
    pub kind: EventKind,
    #[serde(serialize_with = "word_hex")]
    pub word: u64,
}

fn word_hex<S: Serializer>(w: &u64, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(&format_args!("{w:016x}"))
}

impl TraceEvent {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace event serializes")
    }

    pub fn to_csv_line(&self) -> String {
        format!("{},{},{},{:016x}", self.cycle, self.unit, self.kind.as_str(), self.word)
    }
}

pub const TRACE_CSV_HEADER: &str = "cycle,unit,kind,word";

/// Receives trace events in emission order. Sinks are `Send` so a finished
/// engine can hand its sink to another thread.
pub trait TraceSink: Send {
    fn record(&mut self, event: &TraceEvent);
}

impl TraceSink for Vec<TraceEvent> {
    fn record(&mut self, event: &TraceEvent) {
        self.push(*event);
    }
}

/// Discards events.
pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _: &TraceEvent) {}
}

/// SHA-256 over the JSON Lines rendering of the trace.
#[derive(Default, Clone)]
pub struct HashSink {
    hasher: Sha256,
    count: u64,
}

impl HashSink {
    pub fn finish(self) -> String {
        hex_string(&self.hasher.finalize())
    }

    pub fn count(&self) -> u64 {
        self.count
    }
}

impl TraceSink for HashSink {
    fn record(&mut self, event: &TraceEvent) {
        self.hasher.update(event.to_json_line().as_bytes());
        self.hasher.update(b"\n");
        self.count += 1;
    }
}

pub fn trace_hash(events: &[TraceEvent]) -> String {
    let mut sink = HashSink::default();
    for e in events {
        sink.record(e);
    }
    sink.finish()
}

pub fn write_jsonl<W: Write>(events: &[TraceEvent], mut out: W) -> io::Result<()> {
    for e in events {
        writeln!(out, "{}", e.to_json_line())?;
    }
    Ok(())
}

pub fn write_csv<W: Write>(events: &[TraceEvent], mut out: W) -> io::Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for e in events {
        writeln!(out, "{}", e.to_csv_line())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_line_shape() {
        let e = TraceEvent {
            cycle: 6,
            unit: Unit::Site(SiteAddress::new(33).unwrap()),
            kind: EventKind::StallBackpressure,
            word: 0x0217_3F80_0000_0230,
        };
        assert_eq!(
            e.to_json_line(),
            r#"{"cycle":6,"unit":"site:33","kind":"stall_backpressure","word":"02173f8000000230"}"#
        );
        assert_eq!(e.to_csv_line(), "6,site:33,stall_backpressure,02173f8000000230");
        let p = Unit::Port(PortId::VBus { sitem: 1, col: 2, bus: 0 });
        assert_eq!(p.to_string(), "port:V1.2.0");
    }
}
