//! Message format, opcode table, fabric addressing and program containers.
//!
//! A fabric message is a single 64-bit word, bit 0 being the least
//! significant bit:
//!
//! ```text
//!  63        52 51  48 47                    16 15         4 3    0
//! +------------+------+------------------------+------------+------+
//! | next dest  | next |   value (IEEE-754 f32)  | present    | pres |
//! |  (12 bit)  |  op  |                         | dest       |  op  |
//! +------------+------+------------------------+------------+------+
//! ```
//!
//! The numeric opcode table is a convention of this crate; the mnemonics are
//! fixed. Codes 13..=15 are reserved and rejected on decode.

mod asm;
mod binary;
mod program;

pub use asm::{assemble, disassemble, AsmError};
pub use binary::{read_program, write_program, BinaryError, PROGRAM_MAGIC, PROGRAM_VERSION};
pub use program::{ExpectedEgress, Injection, MessageProgram, PortId, ProgramError};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Number of addressable SiteOs (12-bit destination field).
pub const ADDRESS_SPACE: u16 = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IsaError {
    #[error("invalid opcode nibble {0:#x}")]
    InvalidOpcode(u8),
    #[error("address {0} out of range (must be < 4096)")]
    AddressOutOfRange(u32),
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Opcode {
    Prog = 0,
    Update = 1,
    AAdd = 2,
    AAddS = 3,
    ASub = 4,
    ASubS = 5,
    AMul = 6,
    AMulS = 7,
    ADiv = 8,
    ADivS = 9,
    AvAdd = 10,
    Relu = 11,
    Cmp = 12,
}

impl Opcode {
    pub const ALL: [Opcode; 13] = [
        Opcode::Prog,
        Opcode::Update,
        Opcode::AAdd,
        Opcode::AAddS,
        Opcode::ASub,
        Opcode::ASubS,
        Opcode::AMul,
        Opcode::AMulS,
        Opcode::ADiv,
        Opcode::ADivS,
        Opcode::AvAdd,
        Opcode::Relu,
        Opcode::Cmp,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self, IsaError> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or(IsaError::InvalidOpcode(code))
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Prog => "Prog",
            Opcode::Update => "UPDATE",
            Opcode::AAdd => "A_ADD",
            Opcode::AAddS => "A_ADDS",
            Opcode::ASub => "A_SUB",
            Opcode::ASubS => "A_SUBS",
            Opcode::AMul => "A_MUL",
            Opcode::AMulS => "A_MULS",
            Opcode::ADiv => "A_DIV",
            Opcode::ADivS => "A_DIVS",
            Opcode::AvAdd => "Av_ADD",
            Opcode::Relu => "RELU",
            Opcode::Cmp => "CMP",
        }
    }

    /// Opcodes that fold a stream of operands into one result at a site
    /// configured with a non-zero arity.
    pub fn is_reduction(self) -> bool {
        matches!(self, Opcode::AAddS | Opcode::AvAdd | Opcode::Cmp)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

impl FromStr for Opcode {
    type Err = IsaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|op| op.mnemonic() == s)
            .ok_or_else(|| IsaError::UnknownMnemonic(s.to_string()))
    }
}

/// SHA-256 over the mnemonic/code table, printed by `--version` so runs can
/// be tied to the opcode numbering they were produced with.
pub fn isa_table_hash() -> String {
    let mut hasher = Sha256::new();
    for op in Opcode::ALL {
        hasher.update(op.mnemonic().as_bytes());
        hasher.update([b'=', op.code(), b';']);
    }
    hex_string(&hasher.finalize())
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Flat 12-bit SiteO id. SiteM-major: `raw = sitem * 16 + local_row * 4 + local_col`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub struct SiteAddress(u16);

impl SiteAddress {
    pub fn new(raw: u16) -> Result<Self, IsaError> {
        if raw < ADDRESS_SPACE {
            Ok(Self(raw))
        } else {
            Err(IsaError::AddressOutOfRange(raw as u32))
        }
    }

    pub fn from_parts(sitem: u16, local_row: u8, local_col: u8) -> Result<Self, IsaError> {
        if local_row >= 4 || local_col >= 4 {
            return Err(IsaError::AddressOutOfRange(
                sitem as u32 * 16 + local_row as u32 * 4 + local_col as u32,
            ));
        }
        Self::new(sitem * 16 + local_row as u16 * 4 + local_col as u16)
    }

    pub fn raw(self) -> u16 {
        self.0
    }

    pub fn sitem_index(self) -> u16 {
        self.0 / 16
    }

    pub fn local_index(self) -> u8 {
        (self.0 % 16) as u8
    }

    pub fn local_row(self) -> u8 {
        self.local_index() / 4
    }

    pub fn local_col(self) -> u8 {
        self.local_index() % 4
    }
}

impl TryFrom<u16> for SiteAddress {
    type Error = IsaError;

    fn try_from(raw: u16) -> Result<Self, Self::Error> {
        Self::new(raw)
    }
}

impl From<SiteAddress> for u16 {
    fn from(a: SiteAddress) -> u16 {
        a.0
    }
}

impl fmt::Display for SiteAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Value bits marking a `Prog` payload as a reduction header: a negative
/// NaN whose low 20 bits carry the operand count.
const HEADER_MASK: u32 = 0xFFF0_0000;
pub const MAX_ARITY: u32 = 0x000F_FFFF;

/// One fabric message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Message {
    pub opcode: Opcode,
    pub dest: SiteAddress,
    /// Raw IEEE-754 single bits, kept as bits so NaN payloads survive.
    pub value_bits: u32,
    pub next_opcode: Opcode,
    pub next_dest: SiteAddress,
}

impl Default for Message {
    fn default() -> Self {
        Self {
            opcode: Opcode::Prog,
            dest: SiteAddress::default(),
            value_bits: 0,
            next_opcode: Opcode::Prog,
            next_dest: SiteAddress::default(),
        }
    }
}

impl Message {
    pub fn new(
        opcode: Opcode,
        dest: SiteAddress,
        value: f32,
        next_opcode: Opcode,
        next_dest: SiteAddress,
    ) -> Self {
        Self {
            opcode,
            dest,
            value_bits: value.to_bits(),
            next_opcode,
            next_dest,
        }
    }

    pub fn value(&self) -> f32 {
        f32::from_bits(self.value_bits)
    }

    pub fn encode(&self) -> u64 {
        (self.next_dest.raw() as u64) << 52
            | (self.next_opcode.code() as u64) << 48
            | (self.value_bits as u64) << 16
            | (self.dest.raw() as u64) << 4
            | self.opcode.code() as u64
    }

    pub fn decode(word: u64) -> Result<Self, IsaError> {
        let opcode = Opcode::from_code((word & 0xF) as u8)?;
        let next_opcode = Opcode::from_code(((word >> 48) & 0xF) as u8)?;
        Ok(Self {
            opcode,
            dest: SiteAddress((word >> 4 & 0xFFF) as u16),
            value_bits: (word >> 16) as u32,
            next_opcode,
            next_dest: SiteAddress((word >> 52) as u16),
        })
    }

    /// Payload for a `Prog` that configures a reduction site expecting
    /// `arity` operands per result.
    pub fn reduction_header(arity: u32) -> f32 {
        assert!((1..=MAX_ARITY).contains(&arity), "arity {arity} out of range");
        f32::from_bits(HEADER_MASK | arity)
    }

    pub fn header_arity(value_bits: u32) -> Option<u32> {
        let arity = value_bits & MAX_ARITY;
        (value_bits & HEADER_MASK == HEADER_MASK && arity > 0).then_some(arity)
    }
}
