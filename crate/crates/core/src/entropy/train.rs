use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{loss_and_grad, TrainingBatch};
use super::params::Params;
use super::{ALPHABET, SYMBOL_OFFSET};
use crate::error::{Error, Result};
use crate::wire::Reader;

/// Optimizer settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Batches averaged into one optimizer step.
    pub batch_count: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 8,
            batch_count: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if self.batch_count == 0 {
            return Err(Error::Config("batch_count must be at least 1".into()));
        }
        Ok(())
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Adam moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub step: u64,
}

impl Adam {
    pub fn new(params: &Params<f32>) -> Self {
        let zeros: Vec<Vec<f32>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut Params<f32>, grad: &Params<f32>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (ADAM_EPS * c2.sqrt()) as f32;
        let (b1, b2) = (BETA1 as f32, BETA2 as f32);
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grad.tensors()).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= step * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

/// Everything needed to resume training deterministically.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: Params<f32>,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub config: TrainConfig,
    pub history: Vec<f64>,
}

const CKPT_MAGIC: &[u8; 4] = b"DCKP";
const CKPT_VERSION: u16 = 1;

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let model = self.params.to_bytes()?;
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.epoch as u32).to_le_bytes());
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        out.extend_from_slice(&self.config.lr.to_le_bytes());
        out.extend_from_slice(&(self.config.epochs as u32).to_le_bytes());
        out.extend_from_slice(&(self.config.batch_count as u32).to_le_bytes());
        out.extend_from_slice(&self.config.seed.to_le_bytes());
        out.extend_from_slice(&(self.history.len() as u32).to_le_bytes());
        for h in &self.history {
            out.extend_from_slice(&h.to_le_bytes());
        }
        out.extend_from_slice(&(model.len() as u64).to_le_bytes());
        out.extend_from_slice(&model);
        for buf in self.adam.m.iter().chain(&self.adam.v) {
            for x in buf {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 || &bytes[..4] != CKPT_MAGIC {
            return Err(Error::Corrupt("not a training checkpoint".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(Error::Checksum("training checkpoint".into()));
        }
        let mut r = Reader::new(body, "checkpoint");
        r.take(4)?;
        if r.u16()? != CKPT_VERSION {
            return Err(Error::Corrupt("unsupported checkpoint version".into()));
        }
        let epoch = r.u32()? as usize;
        let step = r.u64()?;
        let lr = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let epochs = r.u32()? as usize;
        let batch_count = r.u32()? as usize;
        let seed = r.u64()?;
        let hist_len = r.u32()? as usize;
        let mut history = Vec::with_capacity(hist_len.min(1 << 16));
        for _ in 0..hist_len {
            history.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
        }
        let model_len = r.u64()? as usize;
        let params = Params::<f32>::from_bytes(r.take(model_len)?)?;
        let mut adam = Adam::new(&params);
        adam.step = step;
        for buf in adam.m.iter_mut().chain(adam.v.iter_mut()) {
            let raw = r.take(4 * buf.len())?;
            for (x, c) in buf.iter_mut().zip(raw.chunks_exact(4)) {
                *x = f32::from_le_bytes(c.try_into().unwrap());
            }
        }
        if r.remaining() != 0 {
            return Err(Error::Corrupt("trailing bytes in checkpoint".into()));
        }
        Ok(Self {
            params,
            adam,
            epoch,
            config: TrainConfig {
                lr,
                epochs,
                batch_count,
                seed,
            },
            history,
        })
    }
}

/// Sets every head's output bias to the log of the add-one smoothed
/// marginal of its training targets, so training starts from the order-0
/// statistics instead of a uniform guess.
pub fn init_output_bias(params: &mut Params<f32>, data: &[TrainingBatch]) {
    for (c, head) in params.heads.iter_mut().enumerate() {
        let mut counts = vec![1.0f64; ALPHABET];
        for b in data {
            for (i, &t) in b.targets[c].iter().enumerate() {
                if b.mask[c][i] {
                    counts[(t.clamp(-SYMBOL_OFFSET, SYMBOL_OFFSET) + SYMBOL_OFFSET) as usize] += 1.0;
                }
            }
        }
        let total: f64 = counts.iter().sum();
        for (b, &n) in head.b2.iter_mut().zip(&counts) {
            *b = (n / total).ln() as f32;
        }
    }
}

/// Epoch loop over a fixed dataset.
pub struct Trainer {
    pub params: Params<f32>,
    pub adam: Adam,
    pub config: TrainConfig,
    pub epoch: usize,
    /// Mean batch loss (bits per point) of every completed epoch.
    pub history: Vec<f64>,
}

impl Trainer {
    pub fn new(params: Params<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            adam: Adam::new(&params),
            params,
            config,
            epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.config.validate()?;
        Ok(Self {
            params: ck.params,
            adam: ck.adam,
            config: ck.config,
            epoch: ck.epoch,
            history: ck.history,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            adam: self.adam.clone(),
            epoch: self.epoch,
            config: self.config.clone(),
            history: self.history.clone(),
        }
    }

    /// Visiting order of epoch `epoch`: a permutation seeded by
    /// `seed ^ epoch`, independent of earlier epochs.
    pub fn epoch_order(&self, epoch: usize, len: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.config.seed ^ epoch as u64));
        order
    }

    /// One pass over `data`; returns the mean batch loss. Gradients of the
    /// batches in a step are computed in parallel and summed in index order.
    pub fn run_epoch(&mut self, data: &[TrainingBatch]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Training("empty training set".into()));
        }
        let order = self.epoch_order(self.epoch, data.len());
        let mut loss_sum = 0.0;
        for (s, step) in order.chunks(self.config.batch_count).enumerate() {
            let results: Vec<(f64, Params<f32>)> =
                step.par_iter().map(|&i| loss_and_grad(&self.params, &data[i])).collect();
            let mut grad = self.params.zeros_like();
            for (j, (loss, g)) in results.iter().enumerate() {
                if !loss.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss {loss} in epoch {} step {s} (batch {})",
                        self.epoch, step[j]
                    )));
                }
                loss_sum += loss;
                grad.add_assign(g);
            }
            let scale = 1.0 / step.len() as f32;
            for t in grad.tensors_mut() {
                t.iter_mut().for_each(|x| *x *= scale);
            }
            if !grad.is_finite() {
                return Err(Error::Training(format!("non-finite gradient in epoch {} step {s}", self.epoch)));
            }
            self.adam.update(&mut self.params, &grad, self.config.lr);
        }
        let mean = loss_sum / data.len() as f64;
        self.epoch += 1;
        self.history.push(mean);
        log::info!("epoch {} mean loss {mean:.4} bits/point", self.epoch);
        Ok(mean)
    }

    /// Runs epochs until `config.epochs` are complete.
    pub fn train(&mut self, data: &[TrainingBatch]) -> Result<&[f64]> {
        while self.epoch < self.config.epochs {
            self.run_epoch(data)?;
        }
        Ok(&self.history)
    }
}
