//! Consistency BiGAN: encoder, generator, joint (image, latent) critic, the
//! training objectives and the anomaly score.

use hilbyte_core::par;
use hilbyte_core::ModelInput;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::nn::{Architecture, ModelConfig, Net};
use crate::tensor::{Real, Tensor};
use crate::GanError;

/// Parameter arrays of the three networks, in each net's traversal order.
/// The discriminator list is image branch, latent branch, joint layer, head.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub encoder: Vec<Tensor<T>>,
    pub generator: Vec<Tensor<T>>,
    pub discriminator: Vec<Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn groups(&self) -> [&Vec<Tensor<T>>; 3] {
        [&self.encoder, &self.generator, &self.discriminator]
    }

    pub fn groups_mut(&mut self) -> [&mut Vec<Tensor<T>>; 3] {
        [&mut self.encoder, &mut self.generator, &mut self.discriminator]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.encoder.iter().chain(&self.generator).chain(&self.discriminator)
    }

    pub fn num_scalars(&self) -> usize {
        self.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(Tensor::all_finite)
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        let c = |v: &Vec<Tensor<T>>| v.iter().map(Tensor::cast).collect();
        ParamSet {
            encoder: c(&self.encoder),
            generator: c(&self.generator),
            discriminator: c(&self.discriminator),
        }
    }
}

/// Which networks receive gradients in a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainable {
    None,
    Critic,
    EncoderGenerator,
}

/// Parameters placed on a graph.
pub struct Bound<'g, T: Real> {
    pub encoder: Vec<Var<'g, T>>,
    pub generator: Vec<Var<'g, T>>,
    pub discriminator: Vec<Var<'g, T>>,
}

fn bind_list<'g, T: Real>(g: &'g Graph<T>, ps: &[Tensor<T>], trainable: bool) -> Vec<Var<'g, T>> {
    ps.iter()
        .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
        .collect()
}

pub fn bind<'g, T: Real>(g: &'g Graph<T>, p: &ParamSet<T>, which: Trainable) -> Bound<'g, T> {
    Bound {
        encoder: bind_list(g, &p.encoder, which == Trainable::EncoderGenerator),
        generator: bind_list(g, &p.generator, which == Trainable::EncoderGenerator),
        discriminator: bind_list(g, &p.discriminator, which == Trainable::Critic),
    }
}

/// Score mixing configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    /// Weight of the pixel reconstruction error; `1 − lambda` weighs the
    /// critic-feature error.
    pub lambda: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig { lambda: 0.5 }
    }
}

impl ScoreConfig {
    pub fn new(lambda: f64) -> Result<Self, GanError> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(GanError::Config(format!("lambda must lie in [0, 1], got {lambda}")));
        }
        Ok(ScoreConfig { lambda })
    }
}

/// Per-step loss values.
///
/// `total_eg = eg_adversarial + λ_c · (consistency_image + consistency_latent)`.
/// `critic_loss` includes the weighted gradient penalty, which is also
/// reported on its own.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub critic_loss: f64,
    pub gradient_penalty: f64,
    pub eg_adversarial: f64,
    pub consistency_image: f64,
    pub consistency_latent: f64,
    pub total_eg: f64,
}

impl LossBreakdown {
    pub fn all_finite(&self) -> bool {
        [
            self.critic_loss,
            self.gradient_penalty,
            self.eg_adversarial,
            self.consistency_image,
            self.consistency_latent,
            self.total_eg,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

pub struct CriticTerms<'g, T: Real> {
    pub total: Var<'g, T>,
    pub adversarial: Var<'g, T>,
    pub penalty: Var<'g, T>,
}

pub struct EgTerms<'g, T: Real> {
    pub total: Var<'g, T>,
    pub adversarial: Var<'g, T>,
    pub consistency_image: Var<'g, T>,
    pub consistency_latent: Var<'g, T>,
}

/// Encoder, generator and critic for one [`ModelConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct CBiGan {
    pub config: ModelConfig,
    pub arch: Architecture,
}

impl CBiGan {
    pub fn new(config: ModelConfig) -> Result<Self, GanError> {
        let arch = Architecture::build(&config)?;
        Ok(CBiGan { config, arch })
    }

    pub fn resolution(&self) -> usize {
        self.config.resolution
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Values per image in `[n·R·R, 3]` layout.
    pub fn image_len(&self) -> usize {
        self.resolution() * self.resolution() * 3
    }

    pub fn feature_dim(&self) -> usize {
        self.config.disc_features
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> ParamSet<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = self.arch.encoder.init(&mut rng);
        let generator = self.arch.generator.init(&mut rng);
        let discriminator = self.arch.disc_nets().iter().flat_map(|n| n.init(&mut rng)).collect();
        ParamSet { encoder, generator, discriminator }
    }

    pub fn check_params<T: Real>(&self, p: &ParamSet<T>) -> Result<(), GanError> {
        self.arch.encoder.check_params(&p.encoder)?;
        self.arch.generator.check_params(&p.generator)?;
        let counts = self.arch.disc_param_count();
        if p.discriminator.len() != counts.iter().sum::<usize>() {
            return Err(GanError::Shape(format!(
                "expected {} discriminator arrays, got {}",
                counts.iter().sum::<usize>(),
                p.discriminator.len()
            )));
        }
        let mut off = 0;
        for (net, c) in self.arch.disc_nets().into_iter().zip(counts) {
            net.check_params(&p.discriminator[off..off + c])?;
            off += c;
        }
        Ok(())
    }

    pub fn encoder_fwd<'g, T: Real>(&self, b: &Bound<'g, T>, x: Var<'g, T>, n: usize) -> Var<'g, T> {
        self.arch.encoder.forward(&b.encoder, x, n)
    }

    pub fn generator_fwd<'g, T: Real>(&self, b: &Bound<'g, T>, z: Var<'g, T>, n: usize) -> Var<'g, T> {
        self.arch.generator.forward(&b.generator, z, n)
    }

    /// Critic scores `[n, 1]` and penultimate features `[n, F]`.
    pub fn critic_fwd<'g, T: Real>(
        &self,
        b: &Bound<'g, T>,
        x: Var<'g, T>,
        z: Var<'g, T>,
        n: usize,
    ) -> (Var<'g, T>, Var<'g, T>) {
        let [ci, cl, cj, ch] = self.arch.disc_param_count();
        let d = &b.discriminator;
        let run = |net: &Net, lo: usize, len: usize, v: Var<'g, T>| net.forward(&d[lo..lo + len], v, n);
        let fi = run(&self.arch.disc_image, 0, ci, x);
        let fz = run(&self.arch.disc_latent, ci, cl, z);
        let feats = run(&self.arch.disc_joint, ci + cl, cj, fi.concat_cols(fz));
        let score = run(&self.arch.disc_head, ci + cl + cj, ch, feats);
        (score, feats)
    }

    /// Wasserstein critic objective with a gradient penalty on interpolated
    /// joint pairs. `eps[i]` is the interpolation weight of sample `i`.
    /// Encoder and generator should be bound as constants.
    #[allow(clippy::too_many_arguments)]
    pub fn critic_objective<'g, T: Real>(
        &self,
        g: &'g Graph<T>,
        b: &Bound<'g, T>,
        x: Var<'g, T>,
        z: Var<'g, T>,
        eps: &[T],
        gp_weight: T,
        n: usize,
    ) -> CriticTerms<'g, T> {
        assert_eq!(eps.len(), n, "one interpolation weight per sample");
        let ex = self.encoder_fwd(b, x, n);
        let gz = self.generator_fwd(b, z, n);
        let (real, _) = self.critic_fwd(b, x, ex, n);
        let (fake, _) = self.critic_fwd(b, gz, z, n);
        let adversarial = fake.mean_all().sub(real.mean_all());

        let x_hat = g.param(interpolate(&x.value(), &gz.value(), eps));
        let z_hat = g.param(interpolate(&ex.value(), &z.value(), eps));
        let (d_hat, _) = self.critic_fwd(b, x_hat, z_hat, n);
        let grads = g.grad(d_hat.sum_all(), &[x_hat, z_hat]);
        let sq = |v: Var<'g, T>| {
            let (r, c) = v.shape();
            v.mul(v).reshape(n, r * c / n).sum_cols()
        };
        let norm = sq(grads[0]).add(sq(grads[1])).affine(T::ONE, T::from_f64(1e-12)).sqrt();
        let penalty = norm.affine(T::ONE, -T::ONE).powf(T::from_f64(2.0)).mean_all();
        let total = adversarial.add(penalty.scale(gp_weight));
        CriticTerms { total, adversarial, penalty }
    }

    /// Encoder/generator objective: reversed adversarial term plus the two
    /// consistency terms. The critic should be bound as constant.
    pub fn eg_objective<'g, T: Real>(
        &self,
        b: &Bound<'g, T>,
        x: Var<'g, T>,
        z: Var<'g, T>,
        lambda_c: T,
        n: usize,
    ) -> EgTerms<'g, T> {
        let ex = self.encoder_fwd(b, x, n);
        let gz = self.generator_fwd(b, z, n);
        let (real, _) = self.critic_fwd(b, x, ex, n);
        let (fake, _) = self.critic_fwd(b, gz, z, n);
        let adversarial = real.mean_all().sub(fake.mean_all());
        let consistency_image = x.sub(self.generator_fwd(b, ex, n)).abs().mean_all();
        let consistency_latent = z.sub(self.encoder_fwd(b, gz, n)).abs().mean_all();
        let total = adversarial.add(consistency_image.add(consistency_latent).scale(lambda_c));
        EgTerms { total, adversarial, consistency_image, consistency_latent }
    }

    fn check_batch<T: Real>(&self, x: &Tensor<T>, z: Option<&Tensor<T>>) -> Result<usize, GanError> {
        let r = self.resolution();
        if x.cols != 3 || x.rows % (r * r) != 0 {
            return Err(GanError::Shape(format!(
                "image batch must be [n*{r}*{r}, 3], got [{}, {}]",
                x.rows, x.cols
            )));
        }
        let n = x.rows / (r * r);
        if let Some(z) = z {
            if z.shape() != (n, self.latent_dim()) {
                return Err(GanError::Shape(format!(
                    "latent batch must be [{n}, {}], got [{}, {}]",
                    self.latent_dim(),
                    z.rows,
                    z.cols
                )));
            }
        }
        Ok(n)
    }

    fn check_latent<T: Real>(&self, z: &Tensor<T>) -> Result<usize, GanError> {
        if z.cols != self.latent_dim() {
            return Err(GanError::Shape(format!("latent width must be {}, got {}", self.latent_dim(), z.cols)));
        }
        Ok(z.rows)
    }

    /// Latent codes `[n, latent_dim]` of an image batch.
    pub fn encode<T: Real>(&self, p: &ParamSet<T>, x: &Tensor<T>) -> Result<Tensor<T>, GanError> {
        let n = self.check_batch(x, None)?;
        let g = Graph::new();
        let b = bind(&g, p, Trainable::None);
        let out = self.encoder_fwd(&b, g.constant(x.clone()), n).value();
        Ok((*out).clone())
    }

    /// Images `[n·R·R, 3]` in `[-1, 1]` from latent codes.
    pub fn generate<T: Real>(&self, p: &ParamSet<T>, z: &Tensor<T>) -> Result<Tensor<T>, GanError> {
        let n = self.check_latent(z)?;
        let g = Graph::new();
        let b = bind(&g, p, Trainable::None);
        let out = self.generator_fwd(&b, g.constant(z.clone()), n).value();
        Ok((*out).clone())
    }

    /// Critic scores `[n, 1]` and features `[n, F]` of joint pairs.
    pub fn discriminate<T: Real>(
        &self,
        p: &ParamSet<T>,
        x: &Tensor<T>,
        z: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>), GanError> {
        let n = self.check_batch(x, Some(z))?;
        let g = Graph::new();
        let b = bind(&g, p, Trainable::None);
        let (s, f) = self.critic_fwd(&b, g.constant(x.clone()), g.constant(z.clone()), n);
        Ok(((*s.value()).clone(), (*f.value()).clone()))
    }

    /// Evaluates both objectives on one batch without computing gradients.
    pub fn losses<T: Real>(
        &self,
        p: &ParamSet<T>,
        x: &Tensor<T>,
        z: &Tensor<T>,
        eps: &[T],
        gp_weight: f64,
        lambda_c: f64,
    ) -> Result<LossBreakdown, GanError> {
        let n = self.check_batch(x, Some(z))?;
        let g = Graph::new();
        let b = bind(&g, p, Trainable::None);
        let (xv, zv) = (g.constant(x.clone()), g.constant(z.clone()));
        let c = self.critic_objective(&g, &b, xv, zv, eps, T::from_f64(gp_weight), n);
        let e = self.eg_objective(&b, xv, zv, T::from_f64(lambda_c), n);
        Ok(LossBreakdown {
            critic_loss: c.total.value().item().to_f64(),
            gradient_penalty: c.penalty.value().item().to_f64(),
            eg_adversarial: e.adversarial.value().item().to_f64(),
            consistency_image: e.consistency_image.value().item().to_f64(),
            consistency_latent: e.consistency_latent.value().item().to_f64(),
            total_eg: e.total.value().item().to_f64(),
        })
    }

    /// Per-sample `(pixel_error, feature_error)` for an image batch.
    pub fn score_components<T: Real>(&self, p: &ParamSet<T>, x: &Tensor<T>) -> Result<Vec<(f64, f64)>, GanError> {
        let n = self.check_batch(x, None)?;
        let g = Graph::new();
        let b = bind(&g, p, Trainable::None);
        let xv = g.constant(x.clone());
        let ex = self.encoder_fwd(&b, xv, n);
        let rec = self.generator_fwd(&b, ex, n);
        let (_, f_real) = self.critic_fwd(&b, xv, ex, n);
        let (_, f_rec) = self.critic_fwd(&b, rec, ex, n);
        let pix = per_sample_mae(x, &rec.value(), n);
        let feat = per_sample_mae(&f_real.value(), &f_rec.value(), n);
        Ok(pix.into_iter().zip(feat).collect())
    }

    /// `λ · pixel_error + (1 − λ) · feature_error` per sample.
    pub fn anomaly_scores<T: Real>(&self, p: &ParamSet<T>, x: &Tensor<T>, cfg: ScoreConfig) -> Result<Vec<f64>, GanError> {
        Ok(self
            .score_components(p, x)?
            .into_iter()
            .map(|(pix, feat)| mix(cfg.lambda, pix, feat))
            .collect())
    }

    /// Scores many inputs in fixed-size chunks, in parallel where enabled.
    /// Chunking is independent of thread count, so scores are reproducible.
    pub fn score_inputs<T: Real>(&self, p: &ParamSet<T>, inputs: &[&ModelInput], cfg: ScoreConfig) -> Result<Vec<f64>, GanError> {
        let chunks: Vec<&[&ModelInput]> = inputs.chunks(SCORE_CHUNK).collect();
        let per_chunk = par::map(&chunks, |c| -> Result<Vec<f64>, GanError> {
            let x = stack_inputs::<T>(c, self.resolution())?;
            self.anomaly_scores(p, &x, cfg)
        });
        let mut out = Vec::with_capacity(inputs.len());
        for c in per_chunk {
            out.extend(c?);
        }
        Ok(out)
    }
}

/// Samples scored per forward pass in [`CBiGan::score_inputs`].
pub const SCORE_CHUNK: usize = 32;

pub fn mix(lambda: f64, pixel: f64, feature: f64) -> f64 {
    lambda * pixel + (1.0 - lambda) * feature
}

fn per_sample_mae<T: Real>(a: &Tensor<T>, b: &Tensor<T>, n: usize) -> Vec<f64> {
    let per = a.len() / n.max(1);
    a.data
        .chunks(per.max(1))
        .zip(b.data.chunks(per.max(1)))
        .map(|(x, y)| x.iter().zip(y).map(|(&u, &v)| (u - v).abs().to_f64()).sum::<f64>() / per as f64)
        .collect()
}

/// Row-block interpolation `eps_i · a_i + (1 − eps_i) · b_i`.
fn interpolate<T: Real>(a: &Tensor<T>, b: &Tensor<T>, eps: &[T]) -> Tensor<T> {
    assert_eq!(a.shape(), b.shape());
    let per = a.len() / eps.len();
    let mut out = Tensor::zeros(a.rows, a.cols);
    for (i, &e) in eps.iter().enumerate() {
        for j in i * per..(i + 1) * per {
            out.data[j] = e * a.data[j] + (T::ONE - e) * b.data[j];
        }
    }
    out
}

/// Stacks model inputs into an `[n·R·R, 3]` batch.
pub fn stack_inputs<T: Real>(inputs: &[&ModelInput], resolution: usize) -> Result<Tensor<T>, GanError> {
    let mut data = Vec::with_capacity(inputs.len() * resolution * resolution * 3);
    for mi in inputs {
        if mi.resolution != resolution {
            return Err(GanError::Shape(format!(
                "input resolution {} does not match model resolution {resolution}",
                mi.resolution
            )));
        }
        data.extend(mi.values.iter().map(|&v| T::from_f64(v as f64)));
    }
    Ok(Tensor::new(inputs.len() * resolution * resolution, 3, data))
}

/// Draws `[n, dim]` standard-normal latent codes.
pub fn sample_latent<T: Real>(rng: &mut impl Rng, n: usize, dim: usize) -> Tensor<T> {
    let data = (0..n * dim).map(|_| T::from_f64(rng.sample::<f64, _>(StandardNormal))).collect();
    Tensor::new(n, dim, data)
}
