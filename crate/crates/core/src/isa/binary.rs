//! Binary program file: `MIPUPROG`, u32 version, then 16-byte records
//! `(cycle: u32, port: u16, pad: u16, word: u64)`, all little-endian.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{Injection, IsaError, Message, MessageProgram, PortId, ProgramError};

pub const PROGRAM_MAGIC: &[u8; 8] = b"MIPUPROG";
pub const PROGRAM_VERSION: u32 = 1;
const RECORD_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum BinaryError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a program file (bad magic)")]
    BadMagic,
    #[error("unsupported program version {0}")]
    BadVersion(u32),
    #[error("truncated record at byte {0}")]
    Truncated(usize),
    #[error("record {index}: {source}")]
    BadWord { index: usize, source: IsaError },
    #[error(transparent)]
    Program(#[from] ProgramError),
}

pub fn write_program<W: Write>(program: &MessageProgram, mut out: W) -> io::Result<()> {
    out.write_all(PROGRAM_MAGIC)?;
    out.write_all(&PROGRAM_VERSION.to_le_bytes())?;
    for inj in program.injections() {
        let mut rec = [0u8; RECORD_LEN];
        rec[0..4].copy_from_slice(&inj.cycle.to_le_bytes());
        rec[4..6].copy_from_slice(&inj.port.to_bits().to_le_bytes());
        rec[8..16].copy_from_slice(&inj.message.encode().to_le_bytes());
        out.write_all(&rec)?;
    }
    Ok(())
}

pub fn read_program<R: Read>(mut input: R) -> Result<MessageProgram, BinaryError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[..8] != PROGRAM_MAGIC {
        return Err(BinaryError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != PROGRAM_VERSION {
        return Err(BinaryError::BadVersion(version));
    }
    let body = &bytes[12..];
    if body.len() % RECORD_LEN != 0 {
        return Err(BinaryError::Truncated(12 + body.len() / RECORD_LEN * RECORD_LEN));
    }
    let mut injections = Vec::with_capacity(body.len() / RECORD_LEN);
    for (index, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let cycle = u32::from_le_bytes(rec[0..4].try_into().unwrap());
        let port = PortId::from_bits(u16::from_le_bytes(rec[4..6].try_into().unwrap()));
        let word = u64::from_le_bytes(rec[8..16].try_into().unwrap());
        let message = Message::decode(word).map_err(|source| BinaryError::BadWord { index, source })?;
        injections.push(Injection { cycle, port, message });
    }
    Ok(MessageProgram::from_injections(injections)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::assemble;

    #[test]
    fn layout_is_little_endian() {
        let p = assemble("@4 T0 Prog 35 1.0 A_MULS 33").unwrap();
        let mut buf = Vec::new();
        write_program(&p, &mut buf).unwrap();
        assert_eq!(&buf[..8], b"MIPUPROG");
        assert_eq!(&buf[8..12], &[1, 0, 0, 0]);
        assert_eq!(&buf[12..16], &[4, 0, 0, 0]);
        assert_eq!(&buf[16..20], &[0, 0, 0, 0]);
        assert_eq!(&buf[20..28], &0x0217_3F80_0000_0230u64.to_le_bytes());
        assert_eq!(read_program(&buf[..]).unwrap(), p);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(read_program(&b"NOTAPROG\x01\0\0\0"[..]), Err(BinaryError::BadMagic)));
        assert!(matches!(read_program(&b"MIPUPROG\x02\0\0\0"[..]), Err(BinaryError::BadVersion(2))));
        let mut buf = b"MIPUPROG\x01\0\0\0".to_vec();
        buf.extend_from_slice(&[0u8; 8]);
        assert!(matches!(read_program(&buf[..]), Err(BinaryError::Truncated(12))));
        buf.push(0x0F);
        buf.extend_from_slice(&[0u8; 7]);
        assert!(matches!(read_program(&buf[..]), Err(BinaryError::BadWord { index: 0, .. })));
    }
}
