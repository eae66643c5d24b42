//! `hilbyte` command-line front end.
//!
//! [`run`] parses an argument list, dispatches to the library crates and
//! maps the outcome to an exit code: 0 on success, 1 on a usage error and 2
//! on a runtime failure. Diagnostics go to standard error; data goes to
//! files or standard output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hilbyte_core::corpus::{self, ingest_dir, read_manifest, sha256_hex, split_manifest, write_manifest, SplitRatios};
use hilbyte_core::imgcode::{archive_png, is_png, prepare_model_input, read_png, resize_normalize, ArchiveMeta};
use hilbyte_core::synth::{write_corpus, SynthSpec};
use hilbyte_core::{Coloring, Encoding, Label, Layout, ManifestRecord, ModelInput, Palette, Split};
use hilbyte_gan::ablation::run_ablation;
use hilbyte_gan::dataset::{encode_samples, load_split, synthetic_samples, RawSample};
use hilbyte_gan::run::train_to_dir;
use hilbyte_gan::train::{evaluate, score_split};
use hilbyte_gan::{Checkpoint, ScoreConfig, TrainConfig};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser, Serialize)]
#[command(name = "hilbyte", version, about = "Hilbert-curve byteplots and one-class CBiGAN scoring")]
pub struct Cli {
    /// Cap on worker threads for every parallel stage (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "lowercase")]
pub enum Command {
    /// Walk a directory and write a manifest of labelled files.
    Ingest(IngestArgs),
    /// Assign train/test/validation splits (malicious files never go to train).
    Split(SplitArgs),
    /// Encode files into byteplot PNGs.
    Encode(EncodeArgs),
    /// Train a model on the benign training split of a manifest.
    Train(TrainArgs),
    /// Print `<sha256>\t<score>` for each input file.
    Score(ScoreArgs),
    /// Score a manifest split and report AUC and balanced accuracy.
    Eval(EvalArgs),
    /// Train one model per image encoding and tabulate the results.
    Ablate(AblateArgs),
    /// Generate a synthetic benign/anomalous corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long, value_parser = parse_label)]
    pub label: Label,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long, default_value_t = corpus::DEFAULT_MIN_SIZE)]
    pub min_size: u64,
    #[arg(long, default_value_t = corpus::DEFAULT_MAX_SIZE)]
    pub max_size: u64,
    /// Output manifest (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Merge with an existing manifest at `--out` instead of replacing it.
    #[arg(long)]
    pub append: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output manifest; defaults to rewriting `--manifest`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// train,test,validation fractions.
    #[arg(long, default_value = "0.6,0.2,0.2", value_parser = parse_ratios)]
    #[serde(serialize_with = "ser_ratios")]
    pub ratios: SplitRatios,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct EncodingArgs {
    #[arg(long, default_value = "hilbert")]
    pub layout: Layout,
    #[arg(long, default_value = "rgb")]
    pub coloring: Coloring,
}

impl EncodingArgs {
    fn encoding(&self) -> Encoding {
        Encoding { layout: self.layout, coloring: self.coloring }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EncodeArgs {
    /// A single file to encode (use with `--out`).
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub input: Option<PathBuf>,
    /// Output PNG for `--input`.
    #[arg(long, requires = "input")]
    pub out: Option<PathBuf>,
    /// Encode every file of a manifest (use with `--out-dir`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Receives `<sha256>.<layout>.<coloring>.png` files and an updated manifest.
    #[arg(long, requires = "manifest")]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub encoding: EncodingArgs,
    /// Row width for the row-major greyscale layout (default: size-based).
    #[arg(long)]
    pub row_width: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct ConfigArgs {
    /// Base preset: default or desk.
    #[arg(long, default_value = "default")]
    pub preset: String,
    /// TOML file whose keys override the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub layout: Option<Layout>,
    #[arg(long)]
    pub coloring: Option<Coloring>,
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Score mix: weight of the pixel error against the feature error.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<u64>,
}

impl ConfigArgs {
    /// Preset, then config file, then individual flags.
    pub fn resolve(&self) -> Result<TrainConfig> {
        let base = TrainConfig::preset(&self.preset)?;
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load_over(&base, p).with_context(|| format!("loading {}", p.display()))?,
            None => base,
        };
        if let Some(v) = self.layout {
            cfg.layout = v;
        }
        if let Some(v) = self.coloring {
            cfg.coloring = v;
        }
        if let Some(v) = self.resolution {
            cfg.resolution = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.steps {
            cfg.total_steps = v;
        }
        if let Some(v) = self.eval_every {
            cfg.eval_every = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Raw files or byteplot PNGs; may be repeated.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Override the checkpoint's score mix.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Also write per-sample scores as `id\tlabel\tscore` lines.
    #[arg(long)]
    pub scores_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    /// Use the split manifest's files; without it a synthetic corpus is generated in memory.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma-separated layout:coloring pairs.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "rowmajor:greyscale,hilbert:greyscale,hilbert:rgb"
    )]
    pub encodings: Vec<Encoding>,
    #[arg(long, default_value_t = 400, conflicts_with = "manifest")]
    pub benign: usize,
    #[arg(long, default_value_t = 400, conflicts_with = "manifest")]
    pub anomalous: usize,
    #[arg(long, default_value_t = 7, conflicts_with = "manifest")]
    pub synth_seed: u64,
    #[arg(long, default_value_t = 42, conflicts_with = "manifest")]
    pub split_seed: u64,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub benign: usize,
    #[arg(long, default_value_t = 100)]
    pub anomalous: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

fn parse_label(s: &str) -> Result<Label, String> {
    match s {
        "benign" => Ok(Label::Benign),
        "malicious" | "anomalous" => Ok(Label::Malicious),
        _ => Err(format!("unknown label `{s}` (expected benign|malicious)")),
    }
}

fn parse_ratios(s: &str) -> Result<SplitRatios, String> {
    s.parse()
}

fn ser_ratios<S: serde::Serializer>(r: &SplitRatios, s: S) -> Result<S::Ok, S::Error> {
    [r.train, r.test, r.validation].serialize(s)
}

/// Parses `argv` (program name first), runs the command, returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .try_init();
    match with_workers(cli.workers, || execute(&cli)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

#[cfg(feature = "parallel")]
fn with_workers(workers: Option<usize>, f: impl FnOnce() -> Result<()> + Send) -> Result<()> {
    match workers {
        Some(0) => bail!("--workers must be at least 1"),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_workers(workers: Option<usize>, f: impl FnOnce() -> Result<()> + Send) -> Result<()> {
    if workers.is_some_and(|n| n > 1) {
        warn!("built without the parallel feature; --workers is ignored");
    }
    f()
}

fn log_resolved(value: &impl Serialize) {
    info!("resolved config: {}", serde_json::to_string(value).expect("config serialises"));
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => {
            log_resolved(&json!({ "workers": cli.workers, "command": &cli.command }));
            ingest(a)
        }
        Command::Split(a) => {
            log_resolved(&json!({ "workers": cli.workers, "command": &cli.command }));
            split(a)
        }
        Command::Encode(a) => {
            log_resolved(&json!({ "workers": cli.workers, "command": &cli.command }));
            encode(a)
        }
        Command::Train(a) => {
            let cfg = a.config.resolve()?;
            log_resolved(&json!({ "workers": cli.workers, "command": &cli.command, "train": &cfg }));
            train(a, &cfg)
        }
        Command::Score(a) => {
            log_resolved(&json!({ "workers": cli.workers, "command": &cli.command }));
            score(a)
        }
        Command::Eval(a) => {
            log_resolved(&json!({ "workers": cli.workers, "command": &cli.command }));
            eval(a)
        }
        Command::Ablate(a) => {
            let cfg = a.config.resolve()?;
            log_resolved(&json!({ "workers": cli.workers, "command": &cli.command, "train": &cfg }));
            ablate(a, &cfg)
        }
        Command::Synth(a) => {
            log_resolved(&json!({ "workers": cli.workers, "command": &cli.command }));
            synth(a)
        }
    }
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let report = ingest_dir(&a.root, a.label, a.family.as_deref(), a.min_size, a.max_size)?;
    for w in &report.warnings {
        warn!("{}: {}", w.path.display(), w.message);
    }
    for d in &report.duplicates {
        info!("duplicate content skipped: {}", d.display());
    }
    let mut records: Vec<ManifestRecord> = if a.append && a.out.exists() { read_manifest(&a.out)? } else { Vec::new() };
    let mut known: std::collections::HashSet<String> = records.iter().map(|r| r.sha256.clone()).collect();
    let before = records.len();
    records.extend(report.entries.into_iter().filter(|e| known.insert(e.sha256.clone())).map(ManifestRecord::from));
    ensure_parent(&a.out)?;
    write_manifest(&a.out, &records)?;
    info!("{} new entries, {} total, written to {}", records.len() - before, records.len(), a.out.display());
    Ok(())
}

fn split(a: &SplitArgs) -> Result<()> {
    let mut records = read_manifest(&a.manifest)?;
    let entries: Vec<_> = records.iter().map(ManifestRecord::entry).collect();
    let assignments = split_manifest(&entries, a.ratios, a.seed)?;
    for s in &assignments {
        records[s.entry_id].split = Some(s.split);
    }
    let out = a.out.as_ref().unwrap_or(&a.manifest);
    ensure_parent(out)?;
    write_manifest(out, &records)?;
    for split in [Split::Train, Split::Test, Split::Validation] {
        let n = records.iter().filter(|r| r.split == Some(split)).count();
        info!("{split}: {n}");
    }
    Ok(())
}

fn encode(a: &EncodeArgs) -> Result<()> {
    let enc = a.encoding.encoding();
    let palette = Palette::default();
    if let (Some(input), out) = (&a.input, &a.out) {
        let data = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
        let sha = sha256_hex(&data);
        let png = archive_png(&data, enc, &palette, a.row_width, Some(&sha)).with_context(|| input.display().to_string())?;
        let out = match out {
            Some(p) => p.clone(),
            None => PathBuf::from(format!("{sha}.{}.{}.png", enc.layout, enc.coloring)),
        };
        ensure_parent(&out)?;
        write_atomic(&out, &png)?;
        info!("{} -> {}", input.display(), out.display());
        return Ok(());
    }
    let (Some(manifest), Some(out_dir)) = (&a.manifest, &a.out_dir) else {
        bail!("encode needs either --input or --manifest with --out-dir");
    };
    let mut records = read_manifest(manifest)?;
    fs::create_dir_all(out_dir)?;
    let metas = hilbyte_core::par::map(&records, |r| -> Result<ArchiveMeta> {
        let data = fs::read(&r.path).with_context(|| format!("reading {}", r.path.display()))?;
        if sha256_hex(&data) != r.sha256 {
            bail!("{} changed since it was ingested", r.path.display());
        }
        let png = archive_png(&data, enc, &palette, a.row_width, Some(&r.sha256))
            .with_context(|| r.path.display().to_string())?;
        let (_, meta) = read_png(&png)?;
        write_atomic(&out_dir.join(meta.file_name().expect("digest is set")), &png)?;
        Ok(meta)
    });
    for (r, m) in records.iter_mut().zip(metas) {
        r.image = Some(m?);
    }
    write_manifest(&out_dir.join("manifest.jsonl"), &records)?;
    info!("encoded {} files into {}", records.len(), out_dir.display());
    Ok(())
}

fn load_inputs(manifest: &Path, split: Split, cfg: &TrainConfig) -> Result<Vec<hilbyte_gan::LabeledInput>> {
    let records = read_manifest(manifest)?;
    let raw = load_split(&records, split)?;
    if raw.is_empty() {
        warn!("split {split} of {} is empty", manifest.display());
    }
    Ok(encode_samples(&raw, cfg.encoding(), &Palette::default(), cfg.resolution)?)
}

fn train(a: &TrainArgs, cfg: &TrainConfig) -> Result<()> {
    let tr = load_inputs(&a.manifest, Split::Train, cfg)?;
    let te = load_inputs(&a.manifest, Split::Test, cfg)?;
    let outcome = train_to_dir(cfg, &tr, &te, &a.out_dir)?;
    let best = &outcome.best;
    let summary = json!({
        "best_step": best.step,
        "auc": best.metrics.map(|m| m.auc),
        "balacc": best.metrics.map(|m| m.balacc),
        "threshold": best.metrics.map(|m| m.threshold),
        "final_step": outcome.final_checkpoint.step,
        "param_digest": outcome.final_checkpoint.param_digest(),
    });
    println!("{summary}");
    Ok(())
}

fn score_config(ck: &Checkpoint, lambda: Option<f64>) -> Result<ScoreConfig> {
    Ok(ScoreConfig::new(lambda.unwrap_or(ck.config.lambda))?)
}

/// A raw file is encoded with the checkpoint's encoding; a byteplot PNG is
/// resized as it is.
pub fn input_for(bytes: &[u8], cfg: &TrainConfig) -> Result<ModelInput> {
    if is_png(bytes) {
        let (img, meta) = read_png(bytes)?;
        if (meta.layout, meta.coloring) != (cfg.layout, cfg.coloring) {
            warn!(
                "image is {}:{}, the model was trained on {}",
                meta.layout,
                meta.coloring,
                cfg.encoding()
            );
        }
        Ok(resize_normalize(&img, cfg.resolution)?)
    } else {
        Ok(prepare_model_input(bytes, cfg.encoding(), &Palette::default(), cfg.resolution)?)
    }
}

fn score(a: &ScoreArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let sc = score_config(&ck, a.lambda)?;
    let model = ck.model()?;
    let mut digests = Vec::with_capacity(a.input.len());
    let mut inputs = Vec::with_capacity(a.input.len());
    for p in &a.input {
        let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        inputs.push(input_for(&bytes, &ck.config).with_context(|| p.display().to_string())?);
        digests.push(sha256_hex(&bytes));
    }
    let refs: Vec<&ModelInput> = inputs.iter().collect();
    let scores = model.score_inputs(&ck.ema, &refs, sc)?;
    let mut out = std::io::stdout().lock();
    for (d, s) in digests.iter().zip(scores) {
        writeln!(out, "{d}\t{s}")?;
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let sc = score_config(&ck, a.lambda)?;
    let samples = load_inputs(&a.manifest, a.split, &ck.config)?;
    let scored = score_split(&ck.model()?, &ck.ema, &samples, sc)?;
    if let Some(p) = &a.scores_out {
        let mut text = String::new();
        for s in &scored {
            text.push_str(&format!("{}\t{}\t{}\n", s.sample_id, s.label, s.score));
        }
        ensure_parent(p)?;
        write_atomic(p, text.as_bytes())?;
    }
    let m = evaluate(&scored)?;
    let summary = json!({
        "split": a.split.as_str(),
        "samples": scored.len(),
        "auc": m.auc,
        "balacc": m.balacc,
        "threshold": m.threshold,
        "lambda": sc.lambda,
        "checkpoint_step": ck.step,
    });
    println!("{summary}");
    Ok(())
}

fn ablate(a: &AblateArgs, cfg: &TrainConfig) -> Result<()> {
    if a.encodings.is_empty() {
        bail!("no encodings given");
    }
    let samples: Vec<RawSample> = match &a.manifest {
        Some(m) => {
            let records = read_manifest(m)?;
            let mut s = load_split(&records, Split::Train)?;
            s.extend(load_split(&records, Split::Test)?);
            s
        }
        None => synthetic_samples(
            &SynthSpec::new(a.benign, a.anomalous, a.synth_seed),
            SplitRatios::default(),
            a.split_seed,
        )?,
    };
    let report = run_ablation(&samples, &a.encodings, cfg, &Palette::default(), Some(&a.out_dir))?;
    print!("{}", report.to_tsv());
    if report.any_failed() {
        for r in report.rows.iter().filter(|r| r.error.is_some()) {
            eprintln!("row {} failed: {}", r.encoding(), r.error.as_deref().unwrap_or(""));
        }
        bail!("{} of {} ablation rows failed", report.rows.iter().filter(|r| r.error.is_some()).count(), report.rows.len());
    }
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let spec = SynthSpec::new(a.benign, a.anomalous, a.seed);
    let records = write_corpus(&spec, &a.out_dir).with_context(|| format!("writing {}", a.out_dir.display()))?;
    info!("{} files and manifest.jsonl written to {}", records.len(), a.out_dir.display());
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p)?;
    }
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = corpus::tmp_sibling(path);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
