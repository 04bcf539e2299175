//! Binary checkpoint layout (little-endian):
//!
//! ```text
//! "UPCK" | version u32 | step u64 | adam_t u64 | seed u64
//!        | config_len u32 | config JSON
//!        | record_count u32 | records…
//! record: name_len u32 | name | ndim u32 | dims u32… | payload f64…
//! ```
//!
//! Parameters are stored under their own names, Adam moments under
//! `adam.m/<name>` and `adam.v/<name>`.

use std::fs;
use std::path::{Path, PathBuf};

use super::{AdamState, TrainConfig};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const MAGIC: [u8; 4] = *b"UPCK";
pub const VERSION: u32 = 1;
const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub seed: u64,
    pub params: ParamStore,
    pub optimizer: AdamState,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_record(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, shape.len() as u32);
    for &d in shape {
        put_u32(out, d as u32);
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, VERSION);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.optimizer.t.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        let config = serde_json::to_vec(&self.config).expect("config serializes");
        put_u32(&mut out, config.len() as u32);
        out.extend_from_slice(&config);
        put_u32(&mut out, (self.params.len() * 3) as u32);
        for (name, p) in self.params.iter() {
            put_record(&mut out, name, p.value.shape(), p.value.data());
        }
        for (prefix, moments) in [(M_PREFIX, &self.optimizer.m), (V_PREFIX, &self.optimizer.v)] {
            for (name, p) in self.params.iter() {
                let data = &moments[name];
                put_record(&mut out, &format!("{prefix}{name}"), p.value.shape(), data);
            }
        }
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { path, bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: MAGIC,
                found: magic,
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                expected: VERSION,
                found: version,
            });
        }
        let step = r.u64()?;
        let adam_t = r.u64()?;
        let seed = r.u64()?;
        let config_len = r.u32()? as usize;
        let config: TrainConfig = serde_json::from_slice(r.take(config_len)?).map_err(|e| r.malformed(&format!("config: {e}")))?;
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        let mut optimizer = AdamState {
            t: adam_t,
            ..AdamState::default()
        };
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| r.malformed("record name is not UTF-8"))?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let data: Vec<f64> = r
                .take(numel * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if let Some(p) = name.strip_prefix(M_PREFIX) {
                optimizer.m.insert(p.to_string(), data);
            } else if let Some(p) = name.strip_prefix(V_PREFIX) {
                optimizer.v.insert(p.to_string(), data);
            } else {
                params.insert(name, Tensor::new(shape, data).map_err(|e| r.malformed(&e.to_string()))?);
            }
        }
        if r.pos != bytes.len() {
            return Err(r.malformed("trailing bytes"));
        }
        for (name, p) in params.iter() {
            for moments in [&optimizer.m, &optimizer.v] {
                if moments.get(name).map(Vec::len) != Some(p.value.numel()) {
                    return Err(r.malformed(&format!("missing or misshapen moments for `{name}`")));
                }
            }
        }
        Ok(Self {
            config,
            step,
            seed,
            params,
            optimizer,
        })
    }
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn malformed(&self, reason: &str) -> Error {
        Error::Malformed {
            path: self.path.to_path_buf(),
            reason: reason.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.malformed(&format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Writes via a temporary sibling and a rename so an interrupted save never
/// leaves a partial checkpoint behind.
pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = PathBuf::from(path);
    tmp.as_mut_os_string().push(".tmp");
    fs::write(&tmp, ckpt.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(path, &bytes)
}
