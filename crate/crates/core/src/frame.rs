//! Bit-level framing of a sub-message for ledger serialization.
//!
//! Header, most significant bit first: sender (16 bits, 1-based server id),
//! useful set (K bits, server 1 first), piece j (8 bits, 1-based or 0xFF),
//! piece d (8 bits, 1-based or 0xFF), payload length in bits (32 bits).
//! The payload follows. Header bits are protocol overhead and are never
//! counted as communication load.

use crate::error::{Error, Result};
use crate::shuffle::Piece;
use crate::subset::ServerSet;
use crate::{Bits, BitsRef};

const NO_PIECE: u8 = 0xFF;

pub fn header_bits(servers: usize) -> usize {
    16 + servers + 8 + 8 + 32
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub sender: usize,
    pub useful: ServerSet,
    pub piece: Piece,
    pub payload: Bits,
}

fn push_uint(out: &mut Bits, value: u64, width: usize) {
    for i in (0..width).rev() {
        out.push(value >> i & 1 == 1);
    }
}

fn read_uint(bits: &BitsRef, at: &mut usize, width: usize) -> Result<u64> {
    let end = *at + width;
    let field = bits.get(*at..end).ok_or_else(|| Error::Frame(format!("truncated at bit {}", *at)))?;
    *at = end;
    Ok(field.iter().by_vals().fold(0u64, |acc, b| acc << 1 | b as u64))
}

fn coordinate(value: Option<usize>) -> Result<u64> {
    match value {
        None => Ok(NO_PIECE as u64),
        Some(i) if i < NO_PIECE as usize - 1 => Ok(i as u64 + 1),
        Some(i) => Err(Error::Frame(format!("piece coordinate {i} does not fit in 8 bits"))),
    }
}

pub fn encode(frame: &Frame, servers: usize) -> Result<Bits> {
    if frame.sender >= 1 << 16 || frame.sender >= servers {
        return Err(Error::Frame(format!("sender {} out of range", frame.sender)));
    }
    if frame.useful.iter().any(|k| k >= servers) {
        return Err(Error::Frame(format!("useful set {:?} exceeds K = {servers}", frame.useful)));
    }
    let (j, d) = match frame.piece {
        Piece::Whole => (None, None),
        Piece::Split(j) => (Some(j), None),
        Piece::Split2(j, d) => (Some(j), Some(d)),
    };
    let len = u32::try_from(frame.payload.len()).map_err(|_| Error::Frame("payload longer than 2^32 bits".into()))?;

    let mut out = Bits::with_capacity(header_bits(servers) + frame.payload.len());
    push_uint(&mut out, frame.sender as u64 + 1, 16);
    for k in 0..servers {
        out.push(frame.useful.contains(k));
    }
    push_uint(&mut out, coordinate(j)?, 8);
    push_uint(&mut out, coordinate(d)?, 8);
    push_uint(&mut out, len as u64, 32);
    out.extend_from_bitslice(&frame.payload);
    Ok(out)
}

/// Decode one frame and return it with the number of bits consumed.
pub fn decode(bits: &BitsRef, servers: usize) -> Result<(Frame, usize)> {
    let mut at = 0;
    let sender = read_uint(bits, &mut at, 16)?;
    if sender == 0 || sender as usize > servers {
        return Err(Error::Frame(format!("sender id {sender} out of range")));
    }
    let mut useful = ServerSet::EMPTY;
    for k in 0..servers {
        if read_uint(bits, &mut at, 1)? == 1 {
            useful = useful.with(k);
        }
    }
    let j = read_uint(bits, &mut at, 8)?;
    let d = read_uint(bits, &mut at, 8)?;
    let piece = match (j as u8, d as u8) {
        (NO_PIECE, NO_PIECE) => Piece::Whole,
        (j, NO_PIECE) if j > 0 => Piece::Split(j as usize - 1),
        (j, d) if j > 0 && d > 0 && j != NO_PIECE => Piece::Split2(j as usize - 1, d as usize - 1),
        _ => return Err(Error::Frame(format!("invalid piece coordinates ({j}, {d})"))),
    };
    let len = read_uint(bits, &mut at, 32)? as usize;
    let payload = bits
        .get(at..at + len)
        .ok_or_else(|| Error::Frame(format!("payload of {len} bits truncated")))?
        .to_bitvec();
    at += len;
    Ok((Frame { sender: sender as usize - 1, useful, piece, payload }, at))
}
