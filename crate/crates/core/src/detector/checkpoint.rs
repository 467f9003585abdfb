use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::model::DetectorParams;
use super::DetectorConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"TOYDET\0\0";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Layout: magic, `u32` version, `u32`-prefixed config text, `u32` tensor
/// count, then per tensor a `u32`-prefixed name, `u32` rank, `u32` dims and
/// little-endian `f64` data. All integers are little-endian.
pub fn checkpoint_bytes(cfg: &DetectorConfig, params: &DetectorParams) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    put_u32(&mut out, VERSION);
    let kv = cfg.to_kv();
    put_u32(&mut out, kv.len() as u32);
    out.extend_from_slice(kv.as_bytes());
    let named = params.named();
    put_u32(&mut out, named.len() as u32);
    for (name, t) in named {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank() as u32);
        for &d in t.shape() {
            put_u32(&mut out, d as u32);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_checkpoint(path: &Path, cfg: &DetectorConfig, params: &DetectorParams) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&checkpoint_bytes(cfg, params)).map_err(|e| Error::io(path, e))
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.0.len() < n {
            return Err(Error::Format("checkpoint is truncated".into()));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn text(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("checkpoint text is not UTF-8".into()))
    }
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(DetectorConfig, DetectorParams)> {
    let mut r = Reader(bytes);
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a detector checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut cfg = DetectorConfig::default();
    for line in r.text()?.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad config line `{line}` in checkpoint")))?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    let mut params = DetectorParams::zeros(&cfg);
    let count = r.u32()?;
    let expected: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    if count != expected.len() {
        return Err(Error::Format(format!("checkpoint has {count} tensors, expected {}", expected.len())));
    }
    for (slot, name) in params.tensors_mut().into_iter().zip(&expected) {
        let found = r.text()?;
        if &found != name {
            return Err(Error::Format(format!("expected tensor `{name}`, found `{found}`")));
        }
        let rank = r.u32()?;
        let shape: Vec<usize> = (0..rank).map(|_| r.u32()).collect::<Result<_>>()?;
        if shape != slot.shape() {
            return Err(Error::Format(format!("tensor `{name}` has shape {shape:?}, expected {:?}", slot.shape())));
        }
        let data = r
            .take(8 * slot.len())?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        *slot = Tensor::new(&shape, data)?;
    }
    if !r.0.is_empty() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    params.attention.validate()?;
    Ok((cfg, params))
}

pub fn read_checkpoint(path: &Path) -> Result<(DetectorConfig, DetectorParams)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}
