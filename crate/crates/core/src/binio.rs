//! Little-endian helpers for the versioned binary formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) fn write_header<W: Write>(w: &mut W, magic: &[u8; 4], version: u16) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&version.to_le_bytes())?;
    Ok(())
}

/// Reads and checks the 4-byte magic, returns the version.
pub(crate) fn read_header<R: Read>(r: &mut R, magic: &[u8; 4], supported: u16) -> Result<u16> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got)
        .map_err(|_| Error::Format("truncated header".into()))?;
    if &got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = read_u16(r)?;
    if version != supported {
        return Err(Error::Format(format!(
            "unsupported {} version {version}",
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(version)
}

macro_rules! le_reader {
    ($name:ident, $t:ty) => {
        pub(crate) fn $name<R: Read>(r: &mut R) -> Result<$t> {
            let mut buf = [0u8; std::mem::size_of::<$t>()];
            r.read_exact(&mut buf)
                .map_err(|_| Error::Format("unexpected end of data".into()))?;
            Ok(<$t>::from_le_bytes(buf))
        }
    };
}

le_reader!(read_u8, u8);
le_reader!(read_u16, u16);
le_reader!(read_u32, u32);
le_reader!(read_u64, u64);
le_reader!(read_f32, f32);
le_reader!(read_f64, f64);

/// Fails unless the reader is exhausted.
pub(crate) fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::Format("trailing bytes after payload".into())),
    }
}

pub(crate) fn to_u32(x: usize, what: &str) -> Result<u32> {
    u32::try_from(x).map_err(|_| Error::Format(format!("{what} = {x} does not fit in u32")))
}
