//! Binary model checkpoints.
//!
//! Layout (little endian): magic `TNAN`, one version byte, the
//! hyperparameters, a tensor count, then per tensor a (name length, name,
//! rank, dims, f64 payload) record, and a trailing CRC-32 over everything
//! before it. Round trips are bit exact.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{HyperParams, TnanetParams};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"TNAN";
const VERSION: u8 = 1;

fn crc32(bytes: &[u8]) -> u32 {
    let mut crc: u32 = 0xffff_ffff;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xedb8_8320 & mask);
        }
    }
    !crc
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor(&mut self, name: &str, t: &Tensor) -> Result<()> {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::Checkpoint(format!("tensor name too long: {name}")));
        }
        self.u16(name_bytes.len() as u16);
        self.buf.extend_from_slice(name_bytes);
        if t.shape().len() > u8::MAX as usize {
            return Err(Error::Checkpoint("tensor rank too large".into()));
        }
        self.u8(t.shape().len() as u8);
        for &d in t.shape() {
            self.u32(d as u32);
        }
        for &v in t.data() {
            self.f64(v);
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Serializes the model: every named parameter plus the batch-norm running
/// statistics.
pub fn save_checkpoint(params: &TnanetParams) -> Result<Vec<u8>> {
    let hp = &params.hp;
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u8(VERSION);
    for v in [
        hp.dm,
        hp.t,
        hp.h1,
        hp.h2,
        hp.filters,
        hp.pool2,
        hp.classes,
        hp.max_epochs,
    ] {
        w.u32(v as u32);
    }
    w.f64(hp.lr);
    w.u8(hp.dbn_sigmoid as u8);
    let extra = [
        ("bn1.running_mean", &params.bn1.running_mean),
        ("bn1.running_var", &params.bn1.running_var),
        ("bn2.running_mean", &params.bn2.running_mean),
        ("bn2.running_var", &params.bn2.running_var),
    ];
    w.u32((params.set.len() + extra.len()) as u32);
    for id in params.set.ids() {
        w.tensor(params.set.name(id), params.set.value(id))?;
    }
    for (name, t) in extra {
        w.tensor(name, t)?;
    }
    let crc = crc32(&w.buf);
    w.u32(crc);
    Ok(w.buf)
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<TnanetParams> {
    if bytes.len() < MAGIC.len() + 1 + 4 {
        return Err(Error::Checkpoint("file too small".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32(body);
    if stored != computed {
        return Err(Error::Checkpoint(format!(
            "checksum mismatch: stored {stored:#010x}, computed {computed:#010x}"
        )));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let dm = r.u32()? as usize;
    let t = r.u32()? as usize;
    let h1 = r.u32()? as usize;
    let h2 = r.u32()? as usize;
    let filters = r.u32()? as usize;
    let pool2 = r.u32()? as usize;
    let classes = r.u32()? as usize;
    let max_epochs = r.u32()? as usize;
    let lr = r.f64()?;
    let dbn_sigmoid = r.u8()? != 0;
    let hp = HyperParams {
        dm,
        t,
        h1,
        h2,
        filters,
        pool2,
        classes,
        lr,
        max_epochs,
        dbn_sigmoid,
    };
    hp.validate()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut params = TnanetParams::init(hp, 0)
        .map_err(|e| Error::Checkpoint(format!("cannot build model: {e}")))?;
    let n_tensors = r.u32()? as usize;
    let mut seen = 0usize;
    for _ in 0..n_tensors {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("non-utf8 tensor name".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.f64()?);
        }
        let tensor = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let target = match name.as_str() {
            "bn1.running_mean" => &mut params.bn1.running_mean,
            "bn1.running_var" => &mut params.bn1.running_var,
            "bn2.running_mean" => &mut params.bn2.running_mean,
            "bn2.running_var" => &mut params.bn2.running_var,
            other => {
                let id = params.set.id(other).ok_or_else(|| {
                    Error::Checkpoint(format!("unknown tensor {other:?} for this configuration"))
                })?;
                params.set.value_mut(id)
            }
        };
        if target.shape() != tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name:?} has shape {:?}, expected {:?}",
                tensor.shape(),
                target.shape()
            )));
        }
        *target = tensor;
        seen += 1;
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(
            "trailing bytes after tensor records".into(),
        ));
    }
    let expected = params.set.len() + 4;
    if seen != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {seen} tensors, model needs {expected}"
        )));
    }
    Ok(params)
}

pub fn save_checkpoint_file(path: &Path, params: &TnanetParams) -> Result<()> {
    let bytes = save_checkpoint(params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint_file(path: &Path) -> Result<TnanetParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    load_checkpoint(&bytes)
}
