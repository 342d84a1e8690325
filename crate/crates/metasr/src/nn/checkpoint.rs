//! The `MSRG` checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "MSRG"
//! version  1 byte   (currently 1)
//! entries  repeated until EOF, each:
//!   name_len  u16
//!   name      name_len bytes, UTF-8
//!   rank      u8
//!   extents   rank x u64
//!   values    product(extents) x f32
//! ```
//!
//! Entries are written in lexicographic name order. Values are 32-bit reals
//! regardless of the in-memory precision mode, so `f32` stores round-trip
//! bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::element::Element;
use super::error::CheckpointError;
use super::store::ParameterStore;
use super::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"MSRG";
pub const FORMAT_VERSION: u8 = 1;

pub(crate) fn save<E: Element>(
    path: &Path,
    store: &ParameterStore<E>,
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&[FORMAT_VERSION])?;
    for (name, tensor) in store.iter() {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&[tensor.shape().len() as u8])?;
        for &extent in tensor.shape() {
            w.write_all(&(extent as u64).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&(v.to_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    /// Read exactly `buf.len()` bytes; `Ok(false)` on clean EOF at the first
    /// byte, `Truncated` on EOF mid-record.
    fn read_exact_or_eof(&mut self, buf: &mut [u8], what: &str) -> Result<bool, CheckpointError> {
        let mut filled = 0;
        while filled < buf.len() {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => {
                    if filled == 0 {
                        return Ok(false);
                    }
                    return Err(CheckpointError::Truncated(format!(
                        "unexpected end of file while reading {what}"
                    )));
                }
                Ok(n) => filled += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Ok(true)
    }

    fn read_required(&mut self, buf: &mut [u8], what: &str) -> Result<(), CheckpointError> {
        if !self.read_exact_or_eof(buf, what)? {
            return Err(CheckpointError::Truncated(format!(
                "unexpected end of file while reading {what}"
            )));
        }
        Ok(())
    }
}

pub(crate) fn load<E: Element>(path: &Path) -> Result<ParameterStore<E>, CheckpointError> {
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
    };
    let mut magic = [0u8; 4];
    r.read_required(&mut magic, "magic bytes")?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let mut version = [0u8; 1];
    r.read_required(&mut version, "version byte")?;
    if version[0] != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            got: version[0],
            supported: FORMAT_VERSION,
        });
    }

    let mut store = ParameterStore::new();
    store.set_version(version[0]);
    loop {
        let mut len_buf = [0u8; 2];
        if !r.read_exact_or_eof(&mut len_buf, "entry name length")? {
            break;
        }
        let name_len = u16::from_le_bytes(len_buf) as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_required(&mut name_buf, "entry name")?;
        let name = String::from_utf8(name_buf).map_err(|_| CheckpointError::BadName)?;

        let mut rank_buf = [0u8; 1];
        r.read_required(&mut rank_buf, "entry rank")?;
        let rank = rank_buf[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut ext = [0u8; 8];
            r.read_required(&mut ext, "entry extent")?;
            shape.push(u64::from_le_bytes(ext) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut vb = [0u8; 4];
            r.read_required(&mut vb, "entry values")?;
            data.push(E::from_f64(f32::from_le_bytes(vb) as f64));
        }
        if store.contains(&name) {
            return Err(CheckpointError::DuplicateEntry(name));
        }
        store.insert(
            name,
            Tensor::new(&shape, data).expect("numel derived from shape"),
        );
    }
    Ok(store)
}
