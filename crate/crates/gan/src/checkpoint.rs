//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes          | content                                              |
//! |----------------|------------------------------------------------------|
//! | 8              | magic `HBYTCKPT`                                     |
//! | 4              | format version (`u32`, currently 1)                  |
//! | 4              | header length `H` (`u32`)                            |
//! | H              | UTF-8 JSON header (see [`Header`])                   |
//! | ...            | tensor records                                       |
//! | 32             | SHA-256 of every preceding byte                      |
//!
//! A tensor record is `rows: u32`, `cols: u32`, then `rows·cols` `f32`
//! values in row-major order. Records appear in this order: live encoder,
//! generator and discriminator parameters; the EMA shadows of the same; the
//! encoder+generator Adam first and second moments; the critic Adam first and
//! second moments. Counts follow from the architecture described by the
//! embedded config, and every shape is checked on load.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cbigan::{CBiGan, ParamSet};
use crate::optim::Adam;
use crate::tensor::Tensor;
use crate::train::TrainConfig;
use crate::GanError;

pub const MAGIC: &[u8; 8] = b"HBYTCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Best,
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub auc: f64,
    pub balacc: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Over the encoder parameters followed by the generator parameters.
    pub eg: Adam<f32>,
    pub critic: Adam<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    /// Completed encoder/generator updates.
    pub step: u64,
    pub config: TrainConfig,
    pub params: ParamSet<f32>,
    pub ema: ParamSet<f32>,
    pub optimizer: OptimizerState,
    /// Evaluation of the EMA parameters at `step`, if one ran.
    pub metrics: Option<EvalMetrics>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: CheckpointKind,
    step: u64,
    config: TrainConfig,
    metrics: Option<EvalMetrics>,
    backbone: String,
    latent_dim: usize,
    resolution: usize,
    adam_eg_step: u64,
    adam_critic_step: u64,
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor<f32>) {
    out.extend_from_slice(&(t.rows as u32).to_le_bytes());
    out.extend_from_slice(&(t.cols as u32).to_le_bytes());
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn param_tensors(p: &ParamSet<f32>) -> impl Iterator<Item = &Tensor<f32>> {
    p.iter()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GanError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| GanError::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, GanError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn tensor(&mut self) -> Result<Tensor<f32>, GanError> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| GanError::Checkpoint("tensor size overflows".into()))?;
        let data = self
            .take(n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Tensor::new(rows, cols, data))
    }

    fn tensors(&mut self, n: usize) -> Result<Vec<Tensor<f32>>, GanError> {
        (0..n).map(|_| self.tensor()).collect()
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind,
            step: self.step,
            config: self.config.clone(),
            metrics: self.metrics,
            backbone: self.config.backbone.to_string(),
            latent_dim: self.config.latent_dim,
            resolution: self.config.resolution,
            adam_eg_step: self.optimizer.eg.step,
            adam_critic_step: self.optimizer.critic.step,
        };
        let header = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(64 + header.len() + 4 * 5 * self.params.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let opt = &self.optimizer;
        param_tensors(&self.params)
            .chain(param_tensors(&self.ema))
            .chain(&opt.eg.m)
            .chain(&opt.eg.v)
            .chain(&opt.critic.m)
            .chain(&opt.critic.v)
            .for_each(|t| put_tensor(&mut out, t));
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GanError> {
        let err = |m: &str| GanError::Checkpoint(m.to_owned());
        if bytes.len() < MAGIC.len() + 8 + 32 || &bytes[..8] != MAGIC {
            return Err(err("not a checkpoint file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(err("checksum mismatch (file corrupted)"));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(GanError::Checkpoint(format!("unsupported format version {version}")));
        }
        let hlen = r.u32()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(hlen)?).map_err(|e| GanError::Checkpoint(format!("bad header: {e}")))?;
        header.config.validate()?;
        let model = CBiGan::new(header.config.model_config())?;
        let a = &model.arch;
        let (ne, ng) = (a.encoder.param_specs().len(), a.generator.param_specs().len());
        let nd: usize = a.disc_param_count().iter().sum();
        let read_set = |r: &mut Reader| -> Result<ParamSet<f32>, GanError> {
            Ok(ParamSet { encoder: r.tensors(ne)?, generator: r.tensors(ng)?, discriminator: r.tensors(nd)? })
        };
        let params = read_set(&mut r)?;
        let ema = read_set(&mut r)?;
        model.check_params(&params)?;
        model.check_params(&ema)?;
        let adam_from = |r: &mut Reader, like: Vec<&Tensor<f32>>, lr: f64, step: u64| -> Result<Adam<f32>, GanError> {
            let m = r.tensors(like.len())?;
            let v = r.tensors(like.len())?;
            for t in m.iter().chain(&v).zip(like.iter().chain(&like)) {
                if t.0.shape() != t.1.shape() {
                    return Err(GanError::Checkpoint("optimizer state does not match parameters".into()));
                }
            }
            let mut adam = Adam::new(header.config.adam_config(lr), &[]);
            adam.step = step;
            adam.m = m;
            adam.v = v;
            Ok(adam)
        };
        let eg_like: Vec<&Tensor<f32>> = params.encoder.iter().chain(&params.generator).collect();
        let eg = adam_from(&mut r, eg_like, header.config.lr_eg, header.adam_eg_step)?;
        let critic = adam_from(&mut r, params.discriminator.iter().collect(), header.config.lr_critic, header.adam_critic_step)?;
        if r.pos != body.len() {
            return Err(err("trailing bytes after tensor records"));
        }
        Ok(Checkpoint {
            kind: header.kind,
            step: header.step,
            config: header.config,
            params,
            ema,
            optimizer: OptimizerState { eg, critic },
            metrics: header.metrics,
        })
    }

    /// Writes atomically (temporary sibling, then rename).
    pub fn save(&self, path: &Path) -> Result<(), GanError> {
        let tmp = hilbyte_core::corpus::tmp_sibling(path);
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GanError> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }

    pub fn model(&self) -> Result<CBiGan, GanError> {
        CBiGan::new(self.config.model_config())
    }

    /// SHA-256 over the shapes and values of the live and EMA parameters.
    pub fn param_digest(&self) -> String {
        let mut h = Sha256::new();
        for t in param_tensors(&self.params).chain(param_tensors(&self.ema)) {
            h.update((t.rows as u32).to_le_bytes());
            h.update((t.cols as u32).to_le_bytes());
            for v in &t.data {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
