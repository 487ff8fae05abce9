//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "SEMBCSCK"
//! version  u32      1
//! config   u32 length + UTF-8 key = value text
//! epoch    u64
//! metrics  u32 count, then per metric: u32 length + UTF-8 name, f64
//! tensors  u32 count, then per tensor: u32 length + UTF-8 name,
//!          u32 rank, u64 per dimension, f64 per element (row-major)
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::config;
use crate::model::{AnyModel, BcsModel, FixBcs, ModelKind, SemBcs};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::training::RunConfig;

pub const MAGIC: &[u8; 8] = b"SEMBCSCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Run configuration; `model` and `fix_n_avg` identify the architecture.
    pub config: RunConfig,
    pub epoch: usize,
    pub metrics: Vec<(String, f64)>,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_model<M: BcsModel>(
        model: &M,
        config: &RunConfig,
        epoch: usize,
        metrics: Vec<(String, f64)>,
    ) -> Self {
        let mut config = config.clone();
        config.model = model.kind();
        config.fix_n_avg = match model.kind() {
            ModelKind::FixBcs => Some(model.base_measurements()),
            ModelKind::SemBcs => None,
        };
        Checkpoint {
            config,
            epoch,
            metrics,
            params: model
                .store()
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone().with_requires_grad(false)))
                .collect(),
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }

    /// Rejects a checkpoint whose image size, block size or measurement
    /// budgets differ from `expected`.
    pub fn check_geometry(&self, expected: &RunConfig) -> Result<()> {
        let a = &self.config;
        let key = |c: &RunConfig| (c.height, c.width, c.block, c.n_b, c.n_max);
        if key(a) != key(expected) {
            return Err(Error::Geometry(format!(
                "checkpoint has (H, W, B, n_b, n_max) = {:?}, expected {:?}",
                key(a),
                key(expected)
            )));
        }
        Ok(())
    }

    /// Rebuilds the model architecture and loads the stored parameters.
    pub fn build(&self) -> Result<AnyModel> {
        self.config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = self.config.model_config()?;
        let mut model = match self.config.model {
            ModelKind::SemBcs => AnyModel::Sem(SemBcs::new(cfg, &mut rng)?),
            ModelKind::FixBcs => {
                let n = self
                    .config
                    .fix_n_avg
                    .ok_or_else(|| Error::invalid("fixed-ratio checkpoint without fix_n_avg"))?;
                AnyModel::Fix(FixBcs::new(cfg, n, &mut rng)?)
            }
        };
        let mut store = ParamStore::new();
        for (n, t) in &self.params {
            store.add(n, t.clone());
        }
        model.store_mut().load_from(&store)?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &config::to_text(&self.config));
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        out.extend_from_slice(&(self.metrics.len() as u32).to_le_bytes());
        for (n, v) in &self.metrics {
            put_str(&mut out, n);
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (n, t) in &self.params {
            put_str(&mut out, n);
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(r.err(0, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err(8, format!("unsupported checkpoint version {version}")));
        }
        let cfg_at = r.pos;
        let text = r.string()?;
        let config = config::parse(&text).map_err(|e| r.err(cfg_at, format!("config: {e}")))?;
        let epoch = r.u64()? as usize;
        let n_metrics = r.u32()?;
        let mut metrics = Vec::with_capacity(n_metrics as usize);
        for _ in 0..n_metrics {
            let n = r.string()?;
            metrics.push((n, r.f64()?));
        }
        let n_params = r.u32()?;
        let mut params = Vec::with_capacity(n_params as usize);
        for _ in 0..n_params {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = numel
                .filter(|n| n.saturating_mul(8) <= bytes.len())
                .ok_or_else(|| r.err(r.pos, format!("implausible shape {shape:?}")))?;
            let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            params.push((name, Tensor::from_vec(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(r.err(r.pos, "trailing bytes after the last tensor"));
        }
        Ok(Checkpoint {
            config,
            epoch,
            metrics,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, position: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            position,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                self.err(
                    self.pos,
                    format!("truncated checkpoint, needed {n} more bytes"),
                )
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let at = self.pos;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.err(at, "invalid UTF-8"))
    }
}
