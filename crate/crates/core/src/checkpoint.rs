//! Self-describing binary checkpoint.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "VGNT" | version | spec_len | spec (UTF-8 key=value text) | tensor_count
//! per tensor: name_len | name | flags (1 byte) | rank | dims... | f32 payload
//! ```
//!
//! Flag bits: 0 learnable, 1 fixed kernel, 2 decay exempt. Batch-norm
//! running statistics are stored as tensors with no flags set.

use std::collections::HashSet;
use std::path::Path;

use crate::arch::{Model, ModelSpec};
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::tensor::{Element, ParamFlags, Parameter, Tensor};

pub const MAGIC: &[u8; 4] = b"VGNT";
pub const VERSION: u32 = 1;

const LEARNABLE: u8 = 1;
const FIXED: u8 = 2;
const EXEMPT: u8 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub flags: u8,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl TensorRecord {
    pub fn learnable(&self) -> bool {
        self.flags & LEARNABLE != 0
    }

    pub fn fixed_kernel(&self) -> bool {
        self.flags & FIXED != 0
    }

    pub fn decay_exempt(&self) -> bool {
        self.flags & EXEMPT != 0
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }
}

fn flag_byte(f: ParamFlags) -> u8 {
    ((f.learnable as u8) * LEARNABLE) | ((f.fixed_kernel as u8) * FIXED) | ((f.decay_exempt as u8) * EXEMPT)
}

fn flags_of(b: u8) -> ParamFlags {
    ParamFlags {
        learnable: b & LEARNABLE != 0,
        fixed_kernel: b & FIXED != 0,
        decay_exempt: b & EXEMPT != 0,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Model spec plus any `run.*` provenance keys.
    pub header: String,
    pub tensors: Vec<TensorRecord>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} remain", self.bytes.len() - self.pos),
            )
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("four bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let at = self.pos;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::format(at as u64, format!("{what} is not UTF-8")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self.tensors.iter().map(|t| 4 * t.data.len() + t.name.len() + 16).sum();
        let mut out = Vec::with_capacity(16 + self.header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.header.len() as u32).to_le_bytes());
        out.extend_from_slice(self.header.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.flags);
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::format(0, "bad magic, not a VGNT checkpoint"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}, expected {VERSION}")));
        }
        let header = r.string("spec header")?;
        let count = r.u32("tensor count")? as usize;
        let mut names = HashSet::new();
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let at = r.pos;
            let name = r.string("tensor name")?;
            if !names.insert(name.clone()) {
                return Err(Error::format(at as u64, format!("duplicate tensor {name:?}")));
            }
            let flags = r.take(1, "flags")?[0];
            if flags & !(LEARNABLE | FIXED | EXEMPT) != 0 || (flags & LEARNABLE != 0 && flags & FIXED != 0) {
                return Err(Error::format((r.pos - 1) as u64, format!("invalid flags {flags:#04x} on {name}")));
            }
            let rank = r.u32("rank")? as usize;
            if rank > 8 {
                return Err(Error::format((r.pos - 4) as u64, format!("rank {rank} on {name}")));
            }
            let dims = (0..rank).map(|_| r.u32("dims")).collect::<Result<Vec<_>>>()?;
            let numel = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
            let len = numel
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::format(r.pos as u64, format!("{name}: dims overflow")))?;
            let data = r
                .take(len, &format!("payload of {name}"))?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("four bytes")))
                .collect();
            tensors.push(TensorRecord { name, flags, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos as u64, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        ModelSpec::from_text(&self.header)
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// `run.*` provenance entries written alongside the spec.
    pub fn provenance(&self) -> Vec<(String, String)> {
        KeyValues::parse(&self.header)
            .map(|kv| {
                kv.entries()
                    .iter()
                    .filter_map(|(k, v)| k.strip_prefix("run.").map(|k| (k.to_string(), v.clone())))
                    .collect()
            })
            .unwrap_or_default()
    }
}

fn record<T: Element>(p: &Parameter<T>) -> TensorRecord {
    TensorRecord {
        name: p.name.clone(),
        flags: flag_byte(p.flags()),
        dims: p.dims.iter().map(|&d| d as u32).collect(),
        data: p.tensor.data().iter().map(|v| v.as_f64() as f32).collect(),
    }
}

impl<T: Element> Model<T> {
    /// Snapshot of every parameter and running statistic. `provenance`
    /// entries are stored as `run.<key>` lines after the spec.
    pub fn to_checkpoint(&self, provenance: &[(String, String)]) -> Checkpoint {
        let mut kv = self.spec().to_key_values();
        for (k, v) in provenance {
            kv.push(format!("run.{k}"), v);
        }
        Checkpoint {
            header: kv.to_text(),
            tensors: self.params().iter().chain(self.buffers()).map(record).collect(),
        }
    }

    /// Rebuilds the architecture from the header and loads every tensor by
    /// name; shapes and flags must agree with the spec.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let spec = ckpt.spec()?;
        let mut model = Model::build(&spec, 0)?;
        let mut seen = 0;
        let fill = |p: &mut Parameter<T>, seen: &mut usize| -> Result<()> {
            let t = ckpt
                .tensor(&p.name)
                .ok_or_else(|| Error::format(0, format!("checkpoint lacks tensor {}", p.name)))?;
            let dims: Vec<usize> = t.dims.iter().map(|&d| d as usize).collect();
            if dims != p.dims || flags_of(t.flags) != p.flags() {
                return Err(Error::format(
                    0,
                    format!("{}: stored {dims:?}/{:#04x} disagrees with spec {:?}", p.name, t.flags, p.dims),
                ));
            }
            let data = t.data.iter().map(|&v| T::of(v as f64)).collect();
            let grad = p.learnable;
            p.tensor = Tensor::new(p.tensor.shape(), data)?;
            if grad {
                p.tensor.grad_mut();
            }
            *seen += 1;
            Ok(())
        };
        for p in model.params_mut() {
            fill(p, &mut seen)?;
        }
        for b in model.buffers_mut() {
            fill(b, &mut seen)?;
        }
        if seen != ckpt.tensors.len() {
            return Err(Error::format(
                0,
                format!("checkpoint holds {} tensors, spec uses {seen}", ckpt.tensors.len()),
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path, provenance: &[(String, String)]) -> Result<()> {
        self.to_checkpoint(provenance).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
