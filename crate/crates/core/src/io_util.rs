//! Little-endian readers that never trust a length prefix for allocation.

use std::io::Read;

use crate::error::{Error, Result};

/// Reads exactly `n` bytes. The buffer grows with the data actually present,
/// so a corrupt length cannot trigger a huge allocation up front.
pub(crate) fn read_bytes<R: Read>(r: &mut R, n: usize, what: &'static str) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(n.min(1 << 16));
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(Error::format(what, format!("truncated: wanted {n} bytes, got {}", buf.len())));
    }
    Ok(buf)
}

pub(crate) fn read_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32> {
    let b = read_bytes(r, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub(crate) fn read_u64<R: Read>(r: &mut R, what: &'static str) -> Result<u64> {
    let b = read_bytes(r, 8, what)?;
    let mut a = [0u8; 8];
    a.copy_from_slice(&b);
    Ok(u64::from_le_bytes(a))
}
