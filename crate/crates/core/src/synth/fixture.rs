//! Binary fixture format.
//!
//! ```text
//! "QSTF" | version: u16
//! 6 x ( name_len: u8 | name | rank: u8 | extents: rank x u32 | payload: f64 x prod(extents) )
//! label: u32 | question_type: u8
//! ```
//!
//! All integers and floats are little-endian; payloads are row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{FeatureBundle, QuestionType};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const FIXTURE_MAGIC: [u8; 4] = *b"QSTF";
pub const FIXTURE_VERSION: u16 = 1;
const MAX_RANK: usize = 8;

pub fn write_fixture_to<W: Write>(bundle: &FeatureBundle, mut w: W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&FIXTURE_MAGIC);
    buf.extend_from_slice(&FIXTURE_VERSION.to_le_bytes());
    for (name, t) in FeatureBundle::TENSOR_NAMES.iter().zip(bundle.tensors()) {
        buf.push(name.len() as u8);
        buf.extend_from_slice(name.as_bytes());
        buf.push(t.rank() as u8);
        for &e in t.shape() {
            let e = u32::try_from(e).map_err(|_| Error::Format(format!("extent {e} of `{name}` overflows u32")))?;
            buf.extend_from_slice(&e.to_le_bytes());
        }
        for &x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let label = u32::try_from(bundle.label).map_err(|_| Error::Format("label overflows u32".into()))?;
    buf.extend_from_slice(&label.to_le_bytes());
    buf.push(bundle.question_type.byte());
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_fixture(bundle: &FeatureBundle, path: impl AsRef<Path>) -> Result<()> {
    write_fixture_to(bundle, fs::File::create(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!(
                "truncated fixture: {what} needs {n} bytes at offset {}, {} remain",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn read_fixture_from(bytes: &[u8]) -> Result<FeatureBundle> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != FIXTURE_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected {FIXTURE_MAGIC:?}")));
    }
    let version = c.u16("version")?;
    if version != FIXTURE_VERSION {
        return Err(Error::Format(format!("unsupported fixture version {version}")));
    }
    let mut tensors = Vec::with_capacity(FeatureBundle::TENSOR_NAMES.len());
    for expected in FeatureBundle::TENSOR_NAMES {
        let len = c.u8("name length")? as usize;
        let name = c.take(len, "name")?;
        if name != expected.as_bytes() {
            return Err(Error::Format(format!(
                "expected tensor `{expected}`, found `{}`",
                String::from_utf8_lossy(name)
            )));
        }
        let rank = c.u8("rank")? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Format(format!("tensor `{expected}` has unsupported rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("extent")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .filter(|&n| n.checked_mul(8).is_some())
            .ok_or_else(|| Error::Format(format!("dims {shape:?} of `{expected}` overflow")))?;
        let remaining = bytes.len() - c.pos;
        if count * 8 > remaining {
            return Err(Error::Format(format!(
                "payload length mismatch: `{expected}` declares {shape:?} ({} bytes) but only {remaining} bytes remain",
                count * 8
            )));
        }
        let data = c
            .take(count * 8, "payload")?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::new(&shape, data).map_err(|e| Error::Format(format!("tensor `{expected}`: {e}")))?);
    }
    let label = c.u32("label")? as usize;
    let question_type = QuestionType::from_byte(c.u8("question type")?)?;
    if c.pos != bytes.len() {
        return Err(Error::Format(format!(
            "payload length mismatch: {} trailing bytes after the record",
            bytes.len() - c.pos
        )));
    }
    let mut it = tensors.into_iter();
    let mut next = || it.next().expect("six tensors");
    Ok(FeatureBundle {
        f_v: next(),
        f_p: next(),
        f_a: next(),
        f_ast: next(),
        f_w: next(),
        f_sentence: next(),
        label,
        question_type,
    })
}

pub fn read_fixture(path: impl AsRef<Path>) -> Result<FeatureBundle> {
    read_fixture_from(&fs::read(path)?)
}
