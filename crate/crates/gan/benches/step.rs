//! Cost of one training step and of batch scoring at the desk-scale size.
//!
//! With the default `parallel` feature each benchmark runs on a single-thread
//! rayon pool and on the global pool. Compare against the sequential build
//! with:
//!
//! ```text
//! cargo bench -p hilbyte-gan --bench step -- --save-baseline par
//! cargo bench -p hilbyte-gan --bench step --no-default-features -- --baseline par
//! ```

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hilbyte_core::ModelInput;
use hilbyte_gan::autograd::Graph;
use hilbyte_gan::cbigan::{bind, sample_latent, stack_inputs, CBiGan, Trainable};
use hilbyte_gan::tensor::Tensor;
use hilbyte_gan::{ScoreConfig, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "parallel")]
fn modes() -> Vec<(&'static str, Option<rayon::ThreadPool>)> {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    vec![("1-thread", Some(single)), ("pool", None)]
}

#[cfg(not(feature = "parallel"))]
fn modes() -> Vec<(&'static str, Option<()>)> {
    vec![("sequential", None)]
}

#[cfg(feature = "parallel")]
fn run<R: Send>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> R + Send) -> R {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run<R>(_: &Option<()>, f: impl FnOnce() -> R) -> R {
    f()
}

fn inputs(n: usize, r: usize, rng: &mut ChaCha8Rng) -> Vec<ModelInput> {
    (0..n)
        .map(|_| ModelInput { resolution: r, values: (0..r * r * 3).map(|_| rng.gen_range(-1.0..1.0)).collect() })
        .collect()
}

fn bench_step(c: &mut Criterion) {
    let cfg = TrainConfig::desk();
    let model = CBiGan::new(cfg.model_config()).unwrap();
    let params = model.init_params::<f32>(0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = cfg.batch_size;
    let batch = inputs(n, cfg.resolution, &mut rng);
    let refs: Vec<&ModelInput> = batch.iter().collect();
    let x = stack_inputs::<f32>(&refs, cfg.resolution).unwrap();
    let z = sample_latent::<f32>(&mut rng, n, cfg.latent_dim);
    let eps: Vec<f32> = (0..n).map(|_| rng.gen()).collect();

    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for (mode, pool) in modes() {
        group.bench_function(BenchmarkId::new("critic", mode), |b| {
            b.iter(|| {
                run(&pool, || {
                    let g = Graph::new();
                    let bd = bind(&g, &params, Trainable::Critic);
                    let t = model.critic_objective(&g, &bd, g.constant(x.clone()), g.constant(z.clone()), &eps, 10.0, n);
                    g.grad(t.total, &bd.discriminator).iter().map(|v| (*v.value()).clone()).collect::<Vec<Tensor<f32>>>()
                })
            })
        });
        group.bench_function(BenchmarkId::new("encoder_generator", mode), |b| {
            b.iter(|| {
                run(&pool, || {
                    let g = Graph::new();
                    let bd = bind(&g, &params, Trainable::EncoderGenerator);
                    let t = model.eg_objective(&bd, g.constant(x.clone()), g.constant(z.clone()), cfg.lambda_c as f32, n);
                    let wrt: Vec<_> = bd.encoder.iter().chain(&bd.generator).copied().collect();
                    g.grad(t.total, &wrt).iter().map(|v| (*v.value()).clone()).collect::<Vec<Tensor<f32>>>()
                })
            })
        });
    }
    group.finish();

    let test = inputs(128, cfg.resolution, &mut rng);
    let test_refs: Vec<&ModelInput> = test.iter().collect();
    let mut group = c.benchmark_group("score_inputs");
    group.sample_size(10);
    for (mode, pool) in modes() {
        group.bench_function(BenchmarkId::new("128", mode), |b| {
            b.iter(|| run(&pool, || model.score_inputs(&params, &test_refs, ScoreConfig { lambda: 0.5 }).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_step);
criterion_main!(benches);
