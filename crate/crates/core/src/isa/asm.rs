//! Text listing format.
//!
//! ```text
//! # comment
//! @4 T0 Prog 35 1.0 A_MULS 33
//! @5 V2.1.0 A_MULS 33 0x3F800000 Prog 0
//! => 48 out0
//! ```
//!
//! Injection lines are `@<cycle> <port> <OP> <dest> <value> <NEXT_OP> <next_dest>`;
//! `value` is a decimal float or `0x`-prefixed raw bits. `=> <addr> <tag>`
//! lines list expected egress in arrival order.

use std::fmt::Write as _;

use thiserror::Error;

use super::{ExpectedEgress, IsaError, Message, MessageProgram, Opcode, PortId, SiteAddress};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unknown mnemonic `{name}`")]
    UnknownMnemonic { line: usize, name: String },
    #[error("line {line}: address {value} out of range (must be < 4096)")]
    AddressOutOfRange { line: usize, value: u64 },
}

fn parse_err(line: usize, msg: impl Into<String>) -> AsmError {
    AsmError::Parse { line, msg: msg.into() }
}

fn parse_opcode(tok: &str, line: usize) -> Result<Opcode, AsmError> {
    tok.parse().map_err(|_| AsmError::UnknownMnemonic {
        line,
        name: tok.to_string(),
    })
}

fn parse_address(tok: &str, line: usize) -> Result<SiteAddress, AsmError> {
    let value: u64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("bad address `{tok}`")))?;
    u16::try_from(value)
        .ok()
        .and_then(|v| SiteAddress::new(v).ok())
        .ok_or(AsmError::AddressOutOfRange { line, value })
}

fn parse_value(tok: &str, line: usize) -> Result<u32, AsmError> {
    if let Some(hex) = tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")) {
        return u32::from_str_radix(hex, 16).map_err(|_| parse_err(line, format!("bad raw value `{tok}`")));
    }
    tok.parse::<f32>()
        .map(f32::to_bits)
        .map_err(|_| parse_err(line, format!("bad value `{tok}`")))
}

/// Canonical spelling of a payload: shortest round-tripping decimal for
/// finite values, raw hex otherwise.
pub(crate) fn format_value(bits: u32) -> String {
    let v = f32::from_bits(bits);
    if v.is_finite() {
        format!("{v:?}")
    } else {
        format!("0x{bits:08X}")
    }
}

pub fn assemble(text: &str) -> Result<MessageProgram, AsmError> {
    let mut program = MessageProgram::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        if toks[0] == "=>" {
            if toks.len() != 3 {
                return Err(parse_err(line, "expected `=> <addr> <tag>`"));
            }
            program.expected_egress.push(ExpectedEgress {
                address: parse_address(toks[1], line)?,
                tag: toks[2].to_string(),
            });
            continue;
        }
        let Some(cycle) = toks[0].strip_prefix('@') else {
            return Err(parse_err(line, "expected `@<cycle>` or `=>`"));
        };
        if toks.len() != 7 {
            return Err(parse_err(line, format!("expected 7 fields, found {}", toks.len())));
        }
        let cycle: u32 = cycle
            .parse()
            .map_err(|_| parse_err(line, format!("bad cycle `{}`", toks[0])))?;
        let port: PortId = toks[1].parse().map_err(|e: super::ProgramError| parse_err(line, e.to_string()))?;
        let message = Message {
            opcode: parse_opcode(toks[2], line)?,
            dest: parse_address(toks[3], line)?,
            value_bits: parse_value(toks[4], line)?,
            next_opcode: parse_opcode(toks[5], line)?,
            next_dest: parse_address(toks[6], line)?,
        };
        program
            .push(cycle, port, message)
            .map_err(|e| parse_err(line, e.to_string()))?;
    }
    Ok(program)
}

pub fn disassemble(program: &MessageProgram) -> String {
    let mut out = String::new();
    for inj in program.injections() {
        let m = &inj.message;
        let _ = writeln!(
            out,
            "@{} {} {} {} {} {} {}",
            inj.cycle,
            inj.port,
            m.opcode,
            m.dest,
            format_value(m.value_bits),
            m.next_opcode,
            m.next_dest
        );
    }
    for e in &program.expected_egress {
        let _ = writeln!(out, "=> {} {}", e.address, e.tag);
    }
    out
}

impl From<IsaError> for AsmError {
    fn from(e: IsaError) -> Self {
        parse_err(0, e.to_string())
    }
}
