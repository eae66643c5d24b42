//! Layer descriptions, backbone catalogue and the forward interpreter.
//!
//! A [`Net`] is a plain list of [`Layer`]s plus the input shape. Parameters
//! live outside the net as a flat list of tensors in traversal order, which
//! keeps live weights, EMA shadows and optimiser moments interchangeable.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::tensor::{ConvGeom, Real, Tensor};
use crate::GanError;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Per-sample activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    /// Square feature map, stored as `[n·size·size, channels]`.
    Map { size: usize, channels: usize },
    /// Flat vector, stored as `[n, features]`.
    Flat(usize),
}

impl Shape {
    pub fn numel(self) -> usize {
        match self {
            Shape::Map { size, channels } => size * size * channels,
            Shape::Flat(f) => f,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    Conv { cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize },
    ConvT { cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize },
    Dense { inp: usize, out: usize },
    LeakyRelu,
    Tanh,
    Flatten,
    Unflatten { size: usize, channels: usize },
    /// `x + body(x)`.
    Residual(Vec<Layer>),
    /// `concat(x, body(x))` along channels.
    DenseConcat(Vec<Layer>),
}

/// Weight shape `(rows, cols)` and fan-in of one parametrised layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSpec {
    pub rows: usize,
    pub cols: usize,
    pub fan_in: usize,
    pub is_bias: bool,
}

impl Layer {
    fn conv(cin: usize, cout: usize, (kernel, stride, pad): (usize, usize, usize)) -> Layer {
        Layer::Conv { cin, cout, kernel, stride, pad }
    }

    fn conv_t(cin: usize, cout: usize, (kernel, stride, pad): (usize, usize, usize)) -> Layer {
        Layer::ConvT { cin, cout, kernel, stride, pad }
    }

    fn same3(cin: usize, cout: usize) -> Layer {
        Layer::conv(cin, cout, (3, 1, 1))
    }

    fn collect_params(&self, out: &mut Vec<ParamSpec>) {
        let wb = |out: &mut Vec<ParamSpec>, rows, cols, fan_in, bias_len| {
            out.push(ParamSpec { rows, cols, fan_in, is_bias: false });
            out.push(ParamSpec { rows: 1, cols: bias_len, fan_in, is_bias: true });
        };
        match *self {
            Layer::Conv { cin, cout, kernel, .. } => {
                let f = kernel * kernel * cin;
                wb(out, f, cout, f, cout)
            }
            Layer::ConvT { cin, cout, kernel, stride, .. } => {
                // each output pixel sees about (k/s)² input positions
                let f = cin * (kernel / stride).max(1).pow(2);
                wb(out, cin, kernel * kernel * cout, f, cout)
            }
            Layer::Dense { inp, out: o } => wb(out, inp, o, inp, o),
            Layer::Residual(ref body) | Layer::DenseConcat(ref body) => {
                body.iter().for_each(|l| l.collect_params(out))
            }
            _ => {}
        }
    }

    fn out_shape(&self, s: Shape) -> Result<Shape, GanError> {
        let bad = || GanError::Shape(format!("layer {self:?} cannot take input {s:?}"));
        Ok(match (self, s) {
            (&Layer::Conv { cin, cout, kernel, stride, pad }, Shape::Map { size, channels }) if cin == channels => {
                if size + 2 * pad < kernel {
                    return Err(bad());
                }
                Shape::Map { size: (size + 2 * pad - kernel) / stride + 1, channels: cout }
            }
            (&Layer::ConvT { cin, cout, kernel, stride, pad }, Shape::Map { size, channels }) if cin == channels => {
                Shape::Map { size: (size - 1) * stride + kernel - 2 * pad, channels: cout }
            }
            (&Layer::Dense { inp, out }, Shape::Flat(f)) if f == inp => Shape::Flat(out),
            (Layer::LeakyRelu | Layer::Tanh, s) => s,
            (Layer::Flatten, s) => Shape::Flat(s.numel()),
            (&Layer::Unflatten { size, channels }, Shape::Flat(f)) if f == size * size * channels => {
                Shape::Map { size, channels }
            }
            (Layer::Residual(body), s) => {
                if chain_shape(body, s)? != s {
                    return Err(bad());
                }
                s
            }
            (Layer::DenseConcat(body), Shape::Map { size, channels }) => match chain_shape(body, s)? {
                Shape::Map { size: o, channels: c } if o == size => Shape::Map { size, channels: channels + c },
                _ => return Err(bad()),
            },
            _ => return Err(bad()),
        })
    }

    fn forward<'g, T: Real>(&self, params: &mut std::slice::Iter<'_, Var<'g, T>>, x: Var<'g, T>, n: usize, s: Shape) -> Var<'g, T> {
        let mut take = || *params.next().expect("parameter list too short");
        match *self {
            Layer::Conv { cin, kernel, stride, pad, .. } => {
                let Shape::Map { size, .. } = s else { unreachable!() };
                let (w, b) = (take(), take());
                let geom = ConvGeom::new(n, size, cin, kernel, stride, pad);
                x.im2col(geom).matmul(w, false, false).add_row(b)
            }
            Layer::ConvT { cout, kernel, stride, pad, .. } => {
                let Shape::Map { size, .. } = s else { unreachable!() };
                let (w, b) = (take(), take());
                let geom = ConvGeom::transposed(n, size, cout, kernel, stride, pad);
                x.matmul(w, false, false).col2im(geom).add_row(b)
            }
            Layer::Dense { .. } => {
                let (w, b) = (take(), take());
                x.matmul(w, false, false).add_row(b)
            }
            Layer::LeakyRelu => x.leaky_relu(T::from_f64(LEAKY_SLOPE)),
            Layer::Tanh => x.tanh(),
            Layer::Flatten => x.reshape(n, s.numel()),
            Layer::Unflatten { size, channels } => x.reshape(n * size * size, channels),
            Layer::Residual(ref body) => x.add(run_chain(body, params, x, n, s)),
            Layer::DenseConcat(ref body) => x.concat_cols(run_chain(body, params, x, n, s)),
        }
    }
}

fn chain_shape(layers: &[Layer], mut s: Shape) -> Result<Shape, GanError> {
    for l in layers {
        s = l.out_shape(s)?;
    }
    Ok(s)
}

fn run_chain<'g, T: Real>(
    layers: &[Layer],
    params: &mut std::slice::Iter<'_, Var<'g, T>>,
    mut x: Var<'g, T>,
    n: usize,
    mut s: Shape,
) -> Var<'g, T> {
    for l in layers {
        x = l.forward(params, x, n, s);
        s = l.out_shape(s).expect("shapes validated at construction");
    }
    x
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Net {
    pub input: Shape,
    pub output: Shape,
    pub layers: Vec<Layer>,
}

impl Net {
    pub fn new(input: Shape, layers: Vec<Layer>) -> Result<Self, GanError> {
        let output = chain_shape(&layers, input)?;
        Ok(Net { input, output, layers })
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        self.layers.iter().for_each(|l| l.collect_params(&mut out));
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_specs().iter().map(|p| p.rows * p.cols).sum()
    }

    /// He-normal weights (leaky-ReLU gain), zero biases.
    pub fn init<T: Real>(&self, rng: &mut impl Rng) -> Vec<Tensor<T>> {
        let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
        self.param_specs()
            .iter()
            .map(|p| {
                if p.is_bias {
                    return Tensor::zeros(p.rows, p.cols);
                }
                let normal = Normal::new(0.0, gain / (p.fan_in as f64).sqrt()).expect("positive std");
                let data = (0..p.rows * p.cols).map(|_| T::from_f64(normal.sample(rng))).collect();
                Tensor::new(p.rows, p.cols, data)
            })
            .collect()
    }

    /// Runs the net on a batch of `n` samples laid out per [`Shape`].
    pub fn forward<'g, T: Real>(&self, params: &[Var<'g, T>], x: Var<'g, T>, n: usize) -> Var<'g, T> {
        let mut it = params.iter();
        let y = run_chain(&self.layers, &mut it, x, n, self.input);
        debug_assert!(it.next().is_none(), "parameter list too long");
        y
    }

    /// Checks a parameter list against this net's layout.
    pub fn check_params<T: Real>(&self, params: &[Tensor<T>]) -> Result<(), GanError> {
        let specs = self.param_specs();
        if specs.len() != params.len() {
            return Err(GanError::Shape(format!("expected {} parameter arrays, got {}", specs.len(), params.len())));
        }
        for (i, (s, p)) in specs.iter().zip(params).enumerate() {
            if (s.rows, s.cols) != p.shape() {
                return Err(GanError::Shape(format!(
                    "parameter {i}: expected {}x{}, got {}x{}",
                    s.rows, s.cols, p.rows, p.cols
                )));
            }
        }
        Ok(())
    }
}

/// Encoder backbone variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    BaseConv,
    ResidualSmall,
    ResidualDeep,
    DenseSmall,
}

impl Backbone {
    pub const ALL: [Backbone; 4] = [Backbone::BaseConv, Backbone::ResidualSmall, Backbone::ResidualDeep, Backbone::DenseSmall];

    pub fn as_str(self) -> &'static str {
        match self {
            Backbone::BaseConv => "base_conv",
            Backbone::ResidualSmall => "residual_small",
            Backbone::ResidualDeep => "residual_deep",
            Backbone::DenseSmall => "dense_small",
        }
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backbone {
    type Err = GanError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Backbone::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| GanError::Config(format!("unknown backbone '{s}'")))
    }
}

/// `(kernel, stride, pad)` for each downsampling stage from `resolution` to 4.
fn downsample_plan(resolution: usize) -> Vec<(usize, usize, usize)> {
    let mut size = resolution;
    let mut plan = Vec::new();
    if size >= 32 {
        plan.push((4, 4, 0));
        size /= 4;
    }
    while size > 4 {
        plan.push((4, 2, 1));
        size /= 2;
    }
    plan
}

fn stage_channels(width: usize, stages: usize) -> Vec<usize> {
    (0..stages).map(|i| width << i.min(3)).collect()
}

/// Strided conv stack ending in a flat feature vector, with optional
/// per-stage extra blocks.
fn conv_stack(resolution: usize, width: usize, backbone: Backbone) -> Vec<Layer> {
    let plan = downsample_plan(resolution);
    let chans = stage_channels(width, plan.len());
    let mut layers = Vec::new();
    let mut cin = 3;
    for (i, (&kps, &c)) in plan.iter().zip(&chans).enumerate() {
        layers.push(Layer::conv(cin, c, kps));
        layers.push(Layer::LeakyRelu);
        cin = c;
        let blocks = match backbone {
            Backbone::BaseConv => 0,
            Backbone::ResidualSmall => usize::from(i > 0),
            Backbone::ResidualDeep => 2,
            Backbone::DenseSmall => usize::from(i > 0),
        };
        for _ in 0..blocks {
            match backbone {
                Backbone::DenseSmall => {
                    let g = (c / 2).max(1);
                    layers.push(Layer::DenseConcat(vec![Layer::same3(c, g), Layer::LeakyRelu]));
                    layers.push(Layer::DenseConcat(vec![Layer::same3(c + g, g), Layer::LeakyRelu]));
                    layers.push(Layer::conv(c + 2 * g, c, (1, 1, 0)));
                    layers.push(Layer::LeakyRelu);
                }
                _ => {
                    layers.push(Layer::Residual(vec![Layer::same3(c, c), Layer::LeakyRelu, Layer::same3(c, c)]));
                    layers.push(Layer::LeakyRelu);
                }
            }
        }
    }
    layers.push(Layer::Flatten);
    layers
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub resolution: usize,
    pub latent_dim: usize,
    /// Channels of the first conv stage; later stages double up to 8×.
    pub width: usize,
    /// Width of the discriminator's joint (penultimate) feature layer.
    pub disc_features: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: Backbone::BaseConv,
            resolution: 256,
            latent_dim: 128,
            width: 16,
            disc_features: 128,
        }
    }
}

/// The four networks of the model. The discriminator is split so its joint
/// penultimate features are addressable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub encoder: Net,
    pub generator: Net,
    pub disc_image: Net,
    pub disc_latent: Net,
    pub disc_joint: Net,
    pub disc_head: Net,
}

impl Architecture {
    pub fn build(cfg: &ModelConfig) -> Result<Self, GanError> {
        let r = cfg.resolution;
        if r < 8 || !r.is_power_of_two() {
            return Err(GanError::Config(format!("resolution must be a power of two >= 8, got {r}")));
        }
        if cfg.latent_dim == 0 || cfg.width == 0 || cfg.disc_features == 0 {
            return Err(GanError::Config("latent_dim, width and disc_features must be positive".into()));
        }
        let image = Shape::Map { size: r, channels: 3 };
        let l = cfg.latent_dim;

        let mut enc = conv_stack(r, cfg.width, cfg.backbone);
        let enc_feat = chain_shape(&enc, image)?.numel();
        enc.push(Layer::Dense { inp: enc_feat, out: l });
        let encoder = Net::new(image, enc)?;

        let plan = downsample_plan(r);
        let chans = stage_channels(cfg.width, plan.len());
        let top = *chans.last().expect("at least one stage");
        let mut gen = vec![
            Layer::Dense { inp: l, out: 16 * top },
            Layer::LeakyRelu,
            Layer::Unflatten { size: 4, channels: top },
        ];
        for i in (0..plan.len()).rev() {
            let cout = if i == 0 { 3 } else { chans[i - 1] };
            gen.push(Layer::conv_t(chans[i], cout, plan[i]));
            gen.push(if i == 0 { Layer::Tanh } else { Layer::LeakyRelu });
        }
        let generator = Net::new(Shape::Flat(l), gen)?;

        let disc_image = Net::new(image, conv_stack(r, cfg.width, Backbone::BaseConv))?;
        let zf = cfg.disc_features.min(2 * l).max(1);
        let disc_latent = Net::new(Shape::Flat(l), vec![Layer::Dense { inp: l, out: zf }, Layer::LeakyRelu])?;
        let joint_in = disc_image.output.numel() + zf;
        let disc_joint = Net::new(
            Shape::Flat(joint_in),
            vec![Layer::Dense { inp: joint_in, out: cfg.disc_features }, Layer::LeakyRelu],
        )?;
        let disc_head = Net::new(Shape::Flat(cfg.disc_features), vec![Layer::Dense { inp: cfg.disc_features, out: 1 }])?;

        let arch = Architecture { encoder, generator, disc_image, disc_latent, disc_joint, disc_head };
        debug_assert_eq!(arch.generator.output, image);
        Ok(arch)
    }

    pub fn disc_nets(&self) -> [&Net; 4] {
        [&self.disc_image, &self.disc_latent, &self.disc_joint, &self.disc_head]
    }

    pub fn disc_param_count(&self) -> [usize; 4] {
        self.disc_nets().map(|n| n.param_specs().len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use rand::SeedableRng;

    #[test]
    fn every_backbone_meets_the_shape_contract() {
        for backbone in Backbone::ALL {
            for resolution in [8, 16, 32, 64, 256] {
                let cfg = ModelConfig { backbone, resolution, latent_dim: 6, width: 2, disc_features: 5 };
                let a = Architecture::build(&cfg).unwrap();
                assert_eq!(a.encoder.output, Shape::Flat(6));
                assert_eq!(a.generator.output, Shape::Map { size: resolution, channels: 3 });
                assert_eq!(a.disc_joint.output, Shape::Flat(5));
                assert_eq!(a.disc_head.output, Shape::Flat(1));
            }
        }
        let bad = ModelConfig { resolution: 48, ..Default::default() };
        assert!(Architecture::build(&bad).is_err());
    }

    #[test]
    fn forward_shapes_match_declared_output() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for backbone in Backbone::ALL {
            let cfg = ModelConfig { backbone, resolution: 16, latent_dim: 4, width: 2, disc_features: 3 };
            let a = Architecture::build(&cfg).unwrap();
            let g = Graph::<f64>::new();
            let p: Vec<_> = a.encoder.init::<f64>(&mut rng).into_iter().map(|t| g.constant(t)).collect();
            let x = g.constant(Tensor::filled(3 * 16 * 16, 3, 0.5));
            assert_eq!(a.encoder.forward(&p, x, 3).shape(), (3, 4));
            let pg: Vec<_> = a.generator.init::<f64>(&mut rng).into_iter().map(|t| g.constant(t)).collect();
            let img = a.generator.forward(&pg, g.constant(Tensor::filled(2, 4, 0.1)), 2);
            assert_eq!(img.shape(), (2 * 16 * 16, 3));
            assert!(img.value().data.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn backbone_names_round_trip() {
        for b in Backbone::ALL {
            assert_eq!(b.as_str().parse::<Backbone>().unwrap(), b);
        }
        assert!("resnet".parse::<Backbone>().is_err());
    }
}
