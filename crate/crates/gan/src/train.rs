//! One-class training loop: alternating critic / encoder-generator updates,
//! EMA smoothing, periodic evaluation and best/final checkpoints.

use std::path::Path;
use std::time::Instant;

use hilbyte_core::metrics::{best_balanced_accuracy, roc_auc};
use hilbyte_core::imgcode::{Coloring, Encoding, Layout};
use hilbyte_core::{Label, ModelInput, ScoredSample};
use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::cbigan::{bind, sample_latent, stack_inputs, CBiGan, LossBreakdown, ParamSet, ScoreConfig, Trainable};
use crate::checkpoint::{Checkpoint, CheckpointKind, EvalMetrics, OptimizerState};
use crate::nn::{Backbone, ModelConfig};
use crate::optim::{ema_update, Adam, AdamConfig};
use crate::tensor::Tensor;
use crate::GanError;

/// Training hyperparameters. Serialises as a flat key/value document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Encoder/generator updates. Zero runs evaluation only.
    pub total_steps: u64,
    pub critic_steps: usize,
    pub lr_critic: f64,
    pub lr_eg: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub ema_decay: f64,
    pub eval_every: u64,
    pub seed: u64,
    /// Consistency weight.
    pub lambda_c: f64,
    /// Score mix between pixel and feature error.
    pub lambda: f64,
    pub gp_weight: f64,
    pub resolution: usize,
    pub latent_dim: usize,
    pub backbone: Backbone,
    pub width: usize,
    pub disc_features: usize,
    /// Image encoding the inputs were prepared with.
    pub layout: Layout,
    pub coloring: Coloring,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        TrainConfig {
            batch_size: 32,
            total_steps: 5000,
            critic_steps: 5,
            lr_critic: 1e-4,
            lr_eg: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.9,
            ema_decay: 0.999,
            eval_every: 250,
            seed: 0,
            lambda_c: 1.0,
            lambda: 0.5,
            gp_weight: 10.0,
            resolution: m.resolution,
            latent_dim: m.latent_dim,
            backbone: m.backbone,
            width: m.width,
            disc_features: m.disc_features,
            layout: Layout::Hilbert,
            coloring: Coloring::PaletteRgb,
        }
    }
}

impl TrainConfig {
    /// Small-scale preset: resolution 64, batch 32, 5000 steps, evaluation every 250 steps, with
    /// a small model and optimiser settings that converge within that budget
    /// on one CPU core.
    pub fn desk() -> Self {
        TrainConfig {
            resolution: 64,
            batch_size: 32,
            total_steps: 5000,
            eval_every: 250,
            critic_steps: 1,
            width: 8,
            disc_features: 64,
            latent_dim: 128,
            lr_critic: 2e-4,
            lr_eg: 1e-3,
            lambda_c: 1000.0,
            ema_decay: 0.99,
            ..Default::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self, GanError> {
        match name {
            "default" => Ok(TrainConfig::default()),
            "desk" => Ok(TrainConfig::desk()),
            other => Err(GanError::Config(format!("unknown preset '{other}' (expected default or desk)"))),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone,
            resolution: self.resolution,
            latent_dim: self.latent_dim,
            width: self.width,
            disc_features: self.disc_features,
        }
    }

    pub fn encoding(&self) -> Encoding {
        Encoding { layout: self.layout, coloring: self.coloring }
    }

    pub fn score_config(&self) -> ScoreConfig {
        ScoreConfig { lambda: self.lambda }
    }

    pub fn validate(&self) -> Result<(), GanError> {
        let bad = |m: String| Err(GanError::Config(m));
        if self.batch_size == 0 || self.critic_steps == 0 || self.eval_every == 0 {
            return bad("batch_size, critic_steps and eval_every must be >= 1".into());
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return bad(format!("ema_decay must lie in (0, 1), got {}", self.ema_decay));
        }
        if !(self.lr_critic > 0.0 && self.lr_eg > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.lambda_c >= 0.0 && self.gp_weight >= 0.0) {
            return bad("lambda_c and gp_weight must be non-negative".into());
        }
        ScoreConfig::new(self.lambda)?;
        crate::nn::Architecture::build(&self.model_config())?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, GanError> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| GanError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; keys it omits keep the values of `base`.
    pub fn load_over(base: &TrainConfig, path: &Path) -> Result<Self, GanError> {
        let text = std::fs::read_to_string(path)?;
        let overrides: toml::Table = toml::from_str(&text).map_err(|e| GanError::Config(e.to_string()))?;
        let mut merged = toml::Table::try_from(base).map_err(|e| GanError::Config(e.to_string()))?;
        merged.extend(overrides);
        let cfg: TrainConfig = merged.try_into().map_err(|e: toml::de::Error| GanError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serialises")
    }

    pub fn adam_config(&self, lr: f64) -> AdamConfig {
        AdamConfig { lr, beta1: self.adam_beta1, beta2: self.adam_beta2, ..Default::default() }
    }
}

/// A model input with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInput {
    pub id: String,
    pub label: Label,
    pub input: ModelInput,
}

/// One line of the training log. Evaluation fields are present exactly on
/// evaluation steps; `losses` is absent only for the step-0 evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<LossBreakdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_balacc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Seconds since the start of training. Kept out of the serialised log
    /// so that identical runs write identical logs.
    #[serde(skip)]
    pub wall_time: f64,
}

impl TrainLogRecord {
    pub fn is_eval(&self) -> bool {
        self.eval_auc.is_some()
    }
}

pub struct TrainOutcome {
    pub best: Checkpoint,
    pub final_checkpoint: Checkpoint,
    pub log: Vec<TrainLogRecord>,
}

/// Scores labelled inputs, preserving order.
pub fn score_split(
    model: &CBiGan,
    params: &ParamSet<f32>,
    samples: &[LabeledInput],
    cfg: ScoreConfig,
) -> Result<Vec<ScoredSample>, GanError> {
    let inputs: Vec<&ModelInput> = samples.iter().map(|s| &s.input).collect();
    let scores = model.score_inputs(params, &inputs, cfg)?;
    Ok(samples
        .iter()
        .zip(scores)
        .map(|(s, score)| ScoredSample { sample_id: s.id.clone(), score, label: s.label })
        .collect())
}

pub fn evaluate(scored: &[ScoredSample]) -> Result<EvalMetrics, GanError> {
    let auc = roc_auc(scored)?;
    let (threshold, balacc) = best_balanced_accuracy(scored)?;
    Ok(EvalMetrics { auc, balacc, threshold })
}

/// Streams batches over the training set in reshuffled epochs.
struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    fn new(n: usize) -> Self {
        BatchSampler { order: (0..n).collect(), cursor: n }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.order.shuffle(rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }
}

struct State {
    params: ParamSet<f32>,
    ema: ParamSet<f32>,
    opt_eg: Adam<f32>,
    opt_d: Adam<f32>,
}

impl State {
    fn checkpoint(&self, kind: CheckpointKind, step: u64, cfg: &TrainConfig, metrics: Option<EvalMetrics>) -> Checkpoint {
        Checkpoint {
            kind,
            step,
            config: cfg.clone(),
            params: self.params.clone(),
            ema: self.ema.clone(),
            optimizer: OptimizerState { eg: self.opt_eg.clone(), critic: self.opt_d.clone() },
            metrics,
        }
    }
}

fn concat<T: Clone>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().chain(b).cloned().collect()
}

/// Runs training. `on_record` sees every log record as it is produced,
/// including the diagnostic record of an aborted run.
pub fn train(
    cfg: &TrainConfig,
    train_split: &[LabeledInput],
    test_split: &[LabeledInput],
    mut on_record: impl FnMut(&TrainLogRecord),
) -> Result<TrainOutcome, GanError> {
    cfg.validate()?;
    if let Some(bad) = train_split.iter().find(|s| s.label.is_malicious()) {
        return Err(GanError::MaliciousInTrain(bad.id.clone()));
    }
    if train_split.is_empty() && cfg.total_steps > 0 {
        return Err(GanError::Config("training split is empty".into()));
    }
    let model = CBiGan::new(cfg.model_config())?;
    let r = cfg.resolution;
    let train_inputs: Vec<&ModelInput> = train_split.iter().map(|s| &s.input).collect();
    // validate resolutions up front
    stack_inputs::<f32>(&train_inputs, r)?;
    let test_inputs: Vec<&ModelInput> = test_split.iter().map(|s| &s.input).collect();
    stack_inputs::<f32>(&test_inputs, r)?;

    let params = model.init_params::<f32>(cfg.seed);
    let mut st = State {
        ema: params.clone(),
        opt_eg: Adam::new(cfg.adam_config(cfg.lr_eg), &concat(&params.encoder, &params.generator)),
        opt_d: Adam::new(cfg.adam_config(cfg.lr_critic), &params.discriminator),
        params,
    };
    info!(
        "training {} ({} parameters) on {} samples, {} steps",
        cfg.backbone,
        st.params.num_scalars(),
        train_split.len(),
        cfg.total_steps
    );

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169_6e00);
    let mut sampler = BatchSampler::new(train_split.len());
    let started = Instant::now();
    let mut log = Vec::new();
    let mut emit = |rec: TrainLogRecord, log: &mut Vec<TrainLogRecord>| {
        on_record(&rec);
        log.push(rec);
    };

    let eval = |st: &State| -> Result<EvalMetrics, GanError> {
        evaluate(&score_split(&model, &st.ema, test_split, cfg.score_config())?)
    };

    let m0 = eval(&st)?;
    let mut best = st.checkpoint(CheckpointKind::Best, 0, cfg, Some(m0));
    emit(
        TrainLogRecord {
            step: 0,
            losses: None,
            eval_auc: Some(m0.auc),
            eval_balacc: Some(m0.balacc),
            eval_threshold: Some(m0.threshold),
            error: None,
            wall_time: started.elapsed().as_secs_f64(),
        },
        &mut log,
    );

    let n = cfg.batch_size;
    let gp = cfg.gp_weight as f32;
    let lambda_c = cfg.lambda_c as f32;
    for step in 1..=cfg.total_steps {
        let mut losses = LossBreakdown::default();

        for _ in 0..cfg.critic_steps {
            let idx = sampler.next(&mut rng, n);
            let batch: Vec<&ModelInput> = idx.iter().map(|&i| train_inputs[i]).collect();
            let x = stack_inputs::<f32>(&batch, r)?;
            let z = sample_latent::<f32>(&mut rng, n, cfg.latent_dim);
            let eps: Vec<f32> = (0..n).map(|_| rng.gen::<f32>()).collect();
            let g = Graph::new();
            let b = bind(&g, &st.params, Trainable::Critic);
            let terms = model.critic_objective(&g, &b, g.constant(x), g.constant(z), &eps, gp, n);
            losses.critic_loss = terms.total.value().item() as f64;
            losses.gradient_penalty = terms.penalty.value().item() as f64;
            let grads: Vec<Tensor<f32>> =
                g.grad(terms.total, &b.discriminator).iter().map(|v| (*v.value()).clone()).collect();
            st.opt_d.update(&mut st.params.discriminator, &grads)?;
        }

        let idx = sampler.next(&mut rng, n);
        let batch: Vec<&ModelInput> = idx.iter().map(|&i| train_inputs[i]).collect();
        let x = stack_inputs::<f32>(&batch, r)?;
        let z = sample_latent::<f32>(&mut rng, n, cfg.latent_dim);
        {
            let g = Graph::new();
            let b = bind(&g, &st.params, Trainable::EncoderGenerator);
            let terms = model.eg_objective(&b, g.constant(x), g.constant(z), lambda_c, n);
            losses.eg_adversarial = terms.adversarial.value().item() as f64;
            losses.consistency_image = terms.consistency_image.value().item() as f64;
            losses.consistency_latent = terms.consistency_latent.value().item() as f64;
            losses.total_eg = terms.total.value().item() as f64;
            let wrt = concat(&b.encoder, &b.generator);
            let grads: Vec<Tensor<f32>> = g.grad(terms.total, &wrt).iter().map(|v| (*v.value()).clone()).collect();
            let mut eg = concat(&st.params.encoder, &st.params.generator);
            st.opt_eg.update(&mut eg, &grads)?;
            let ne = st.params.encoder.len();
            st.params.generator = eg.split_off(ne);
            st.params.encoder = eg;
        }

        if !losses.all_finite() || !st.params.all_finite() {
            let detail = format!("{losses:?}");
            emit(
                TrainLogRecord {
                    step,
                    losses: Some(losses),
                    eval_auc: None,
                    eval_balacc: None,
                    eval_threshold: None,
                    error: Some("non-finite loss or parameters; training aborted".into()),
                    wall_time: started.elapsed().as_secs_f64(),
                },
                &mut log,
            );
            return Err(GanError::NonFinite { step, detail });
        }

        let decay = cfg.ema_decay as f32;
        for (s, c) in st.ema.groups_mut().into_iter().zip(st.params.groups()) {
            ema_update(s, c, decay)?;
        }

        let is_eval = step % cfg.eval_every == 0 || step == cfg.total_steps;
        let metrics = if is_eval { Some(eval(&st)?) } else { None };
        if let Some(m) = metrics {
            info!("step {step}: auc {:.4} balacc {:.4} eg {:.4} critic {:.4}", m.auc, m.balacc, losses.total_eg, losses.critic_loss);
            let best_auc = best.metrics.map_or(f64::NEG_INFINITY, |b| b.auc);
            if m.auc > best_auc {
                best = st.checkpoint(CheckpointKind::Best, step, cfg, Some(m));
            }
        } else {
            debug!("step {step}: eg {:.4} critic {:.4}", losses.total_eg, losses.critic_loss);
        }
        emit(
            TrainLogRecord {
                step,
                losses: Some(losses),
                eval_auc: metrics.map(|m| m.auc),
                eval_balacc: metrics.map(|m| m.balacc),
                eval_threshold: metrics.map(|m| m.threshold),
                error: None,
                wall_time: started.elapsed().as_secs_f64(),
            },
            &mut log,
        );
    }

    let last_metrics = log.iter().rev().find(|r| r.is_eval()).map(|r| EvalMetrics {
        auc: r.eval_auc.unwrap_or_default(),
        balacc: r.eval_balacc.unwrap_or_default(),
        threshold: r.eval_threshold.unwrap_or_default(),
    });
    let final_checkpoint = st.checkpoint(CheckpointKind::Final, cfg.total_steps, cfg, last_metrics);
    Ok(TrainOutcome { best, final_checkpoint, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        TrainConfig::default().validate().unwrap();
        let d = TrainConfig::desk();
        d.validate().unwrap();
        assert_eq!((d.resolution, d.batch_size, d.total_steps, d.eval_every), (64, 32, 5000, 250));
        assert!(TrainConfig::preset("huge").is_err());
    }

    #[test]
    fn toml_round_trip_and_overrides() {
        let cfg = TrainConfig::desk();
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "total_steps = 7\nbackbone = \"dense_small\"\n").unwrap();
        let merged = TrainConfig::load_over(&cfg, &path).unwrap();
        assert_eq!(merged.total_steps, 7);
        assert_eq!(merged.backbone, Backbone::DenseSmall);
        assert_eq!(merged.resolution, 64);
        std::fs::write(&path, "layout = \"rowmajor\"\ncoloring = \"greyscale\"\n").unwrap();
        assert_eq!(TrainConfig::load_over(&cfg, &path).unwrap().encoding(), Encoding::GREY_ROW_MAJOR);
        std::fs::write(&path, "ema_decay = 1.0\n").unwrap();
        assert!(TrainConfig::load_over(&cfg, &path).is_err());
        std::fs::write(&path, "no_such_key = 1\n").unwrap();
        assert!(TrainConfig::load_over(&cfg, &path).is_err());
    }

    #[test]
    fn sampler_covers_each_epoch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = BatchSampler::new(5);
        let mut seen = s.next(&mut rng, 5);
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        assert_eq!(s.next(&mut rng, 12).len(), 12);
    }
}
