//! Binary checkpoint format.
//!
//! ```text
//! magic    b"ENCKPT01"
//! u32      header length, then that many bytes of `key=value\n` lines
//! u32      tensor count
//! per tensor:
//!   u32 name length, name bytes (UTF-8)
//!   u32 ndim, ndim × u64 dims
//!   prod(dims) × f32
//! ```
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ParamStore, Scalar, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"ENCKPT01";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: BTreeMap<String, String>,
    pub params: ParamStore<f32>,
}

pub fn write_checkpoint<F: Scalar>(
    path: &Path,
    header: &BTreeMap<String, String>,
    params: &ParamStore<F>,
) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    encode(&mut w, header, params).map_err(io)?;
    w.flush().map_err(io)
}

fn encode<W: Write, F: Scalar>(
    w: &mut W,
    header: &BTreeMap<String, String>,
    params: &ParamStore<F>,
) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    let mut text = String::new();
    for (k, v) in header {
        text.push_str(k);
        text.push('=');
        text.push_str(v);
        text.push('\n');
    }
    w.write_all(&(text.len() as u32).to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for &x in &t.data {
            buf.extend_from_slice(&(x.f64() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    decode(&mut BufReader::new(f)).map_err(|e| match e {
        DecodeError::Io(e) if e.kind() != std::io::ErrorKind::UnexpectedEof => Error::io(path, e),
        DecodeError::Io(_) => Error::format("checkpoint", "truncated file"),
        DecodeError::Bad(d) => Error::format("checkpoint", d),
    })
}

enum DecodeError {
    Io(std::io::Error),
    Bad(String),
}

impl From<std::io::Error> for DecodeError {
    fn from(e: std::io::Error) -> Self {
        DecodeError::Io(e)
    }
}

fn u32_le<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn decode<R: Read>(r: &mut R) -> std::result::Result<Checkpoint, DecodeError> {
    let mut magic = [0; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DecodeError::Bad("bad magic (not an encoder checkpoint or wrong version)".into()));
    }
    let hlen = u32_le(r)? as usize;
    let mut htext = vec![0; hlen];
    r.read_exact(&mut htext)?;
    let htext = String::from_utf8(htext).map_err(|_| DecodeError::Bad("header is not UTF-8".into()))?;
    let mut header = BTreeMap::new();
    for line in htext.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| DecodeError::Bad(format!("header line {line:?}")))?;
        header.insert(k.to_string(), v.to_string());
    }
    let count = u32_le(r)?;
    let mut params = ParamStore::default();
    for _ in 0..count {
        let nlen = u32_le(r)? as usize;
        let mut name = vec![0; nlen];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| DecodeError::Bad("tensor name is not UTF-8".into()))?;
        let ndim = u32_le(r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0; 8];
            r.read_exact(&mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0; n * 4];
        r.read_exact(&mut bytes)?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if !data.iter().all(|x| x.is_finite()) {
            return Err(DecodeError::Bad(format!("tensor {name} has non-finite values")));
        }
        if params.index(&name).is_some() {
            return Err(DecodeError::Bad(format!("duplicate tensor {name}")));
        }
        params.push(name, Tensor { shape, data });
    }
    let mut rest = [0; 1];
    if r.read(&mut rest)? != 0 {
        return Err(DecodeError::Bad("trailing bytes".into()));
    }
    Ok(Checkpoint { header, params })
}
