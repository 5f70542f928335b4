//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SAGN"  u32 version (1)  u32 tensor count
//! per tensor: u16 name length, UTF-8 name, u8 dtype (0 = f32), u8 rank,
//!             u32 dims[rank], f32 data[product(dims)]
//! u32 CRC32 of every preceding byte
//! ```
//!
//! Optimizer state travels as extra tensors under the `@adam.` prefix.
//! Scalars that must survive exactly (step counter, hyperparameters) are
//! split into 16-bit pieces, each of which an f32 holds exactly.

use std::collections::BTreeMap;
use std::path::Path;

use super::adam::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SAGN";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

const ADAM_PREFIX: &str = "@adam.";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore<f32>,
    pub adam: Option<AdamState<f32>>,
}

fn split_u64(v: u64) -> [f32; 4] {
    std::array::from_fn(|i| ((v >> (16 * i)) & 0xFFFF) as f32)
}

fn join_u64(parts: &[f32]) -> Result<u64> {
    let mut v = 0u64;
    for (i, &p) in parts.iter().enumerate() {
        if !(0.0..=65535.0).contains(&p) || p.fract() != 0.0 {
            return Err(Error::Checkpoint(format!(
                "corrupt packed integer piece {p}"
            )));
        }
        v |= (p as u64) << (16 * i);
    }
    Ok(v)
}

/// Named tensors in file order.
fn records(params: &ParamStore<f32>, adam: Option<&AdamState<f32>>) -> Vec<(String, Tensor<f32>)> {
    let mut out: Vec<(String, Tensor<f32>)> =
        params.iter().map(|(n, t)| (n.clone(), t.clone())).collect();
    if let Some(a) = adam {
        out.push((
            format!("{ADAM_PREFIX}step"),
            Tensor::new(vec![4], split_u64(a.step).to_vec()).expect("4"),
        ));
        let c = a.config;
        let cfg: Vec<f32> = [c.lr, c.beta1, c.beta2, c.eps]
            .iter()
            .flat_map(|v| split_u64(v.to_bits()))
            .collect();
        out.push((
            format!("{ADAM_PREFIX}config"),
            Tensor::new(vec![4, 4], cfg).expect("16"),
        ));
        for (name, (m, v)) in &a.moments {
            out.push((format!("{ADAM_PREFIX}m.{name}"), m.clone()));
            out.push((format!("{ADAM_PREFIX}v.{name}"), v.clone()));
        }
    }
    out
}

pub fn encode(params: &ParamStore<f32>, adam: Option<&AdamState<f32>>) -> Result<Vec<u8>> {
    let recs = records(params, adam);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let count =
        u32::try_from(recs.len()).map_err(|_| Error::Checkpoint("too many tensors".into()))?;
    buf.extend_from_slice(&count.to_le_bytes());
    for (name, t) in &recs {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(DTYPE_F32);
        let rank = u8::try_from(t.rank())
            .map_err(|_| Error::Checkpoint(format!("rank too large: {name}")))?;
        buf.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d)
                .map_err(|_| Error::Checkpoint(format!("dimension too large: {name}")))?;
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2"),
        ))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a SAGN checkpoint".into()));
    }
    if bytes.len() < 16 {
        return Err(Error::Checkpoint(format!(
            "truncated: {} bytes",
            bytes.len()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let mut r = Reader { buf: body, pos: 8 };
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::new();
    for i in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(Error::Checkpoint(format!(
                "`{name}`: unknown dtype {dtype}"
            )));
        }
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dims")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
            "data",
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4")))
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!(
            "{} unexpected bytes before checksum",
            body.len() - r.pos
        )));
    }
    let stored = u32::from_le_bytes(tail.try_into().expect("4"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Checkpoint(format!(
            "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    assemble(tensors)
}

fn assemble(tensors: Vec<(String, Tensor<f32>)>) -> Result<Checkpoint> {
    let mut params = ParamStore::new();
    let mut step = None;
    let mut config = None;
    let mut m = BTreeMap::new();
    let mut v = BTreeMap::new();
    for (name, t) in tensors {
        let Some(rest) = name.strip_prefix(ADAM_PREFIX) else {
            if params.contains(&name) {
                return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
            }
            params.insert(name, t);
            continue;
        };
        if rest == "step" {
            step = Some(join_u64(t.data())?);
        } else if rest == "config" {
            let d = t.data();
            if d.len() != 16 {
                return Err(Error::Checkpoint(
                    "optimizer config must hold 16 values".into(),
                ));
            }
            let f = |i: usize| join_u64(&d[4 * i..4 * i + 4]).map(f64::from_bits);
            config = Some(AdamConfig {
                lr: f(0)?,
                beta1: f(1)?,
                beta2: f(2)?,
                eps: f(3)?,
            });
        } else if let Some(p) = rest.strip_prefix("m.") {
            m.insert(p.to_string(), t);
        } else if let Some(p) = rest.strip_prefix("v.") {
            v.insert(p.to_string(), t);
        } else {
            return Err(Error::Checkpoint(format!(
                "unknown optimizer record `{name}`"
            )));
        }
    }
    let adam = match (step, config) {
        (None, None) if m.is_empty() && v.is_empty() => None,
        (Some(step), Some(config)) => {
            let mut moments = BTreeMap::new();
            for (name, mt) in m {
                let vt = v.remove(&name).ok_or_else(|| {
                    Error::Checkpoint(format!("first moment of `{name}` has no second moment"))
                })?;
                let p = params.get(&name).map_err(|_| {
                    Error::Checkpoint(format!("moments for unknown parameter `{name}`"))
                })?;
                if mt.shape() != p.shape() || vt.shape() != p.shape() {
                    return Err(Error::Checkpoint(format!(
                        "moment shapes of `{name}` do not match"
                    )));
                }
                moments.insert(name, (mt, vt));
            }
            if let Some(name) = v.keys().next() {
                return Err(Error::Checkpoint(format!(
                    "second moment of `{name}` has no first moment"
                )));
            }
            Some(AdamState {
                config,
                step,
                moments,
            })
        }
        _ => return Err(Error::Checkpoint("incomplete optimizer state".into())),
    };
    Ok(Checkpoint { params, adam })
}

/// Write via a temporary sibling and rename, so a crash never leaves a
/// half-written checkpoint under `path`.
pub fn save_checkpoint(
    path: &Path,
    params: &ParamStore<f32>,
    adam: Option<&AdamState<f32>>,
) -> Result<()> {
    let bytes = encode(params, adam)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
