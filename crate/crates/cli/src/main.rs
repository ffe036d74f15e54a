//! `umtk` command line: synthetic data, training, prediction, metrics,
//! uncertainty, artifact detection, active learning and inspection renders.
//!
//! Every command writes `config.json` into its output directory with the
//! fully resolved arguments; `umtk rerun --config <file>` replays it.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use umtk::active::{run_loop, write_csv, LoopConfig, RunLog, ScoreConfig, Strategy, DEFAULT_SCHEDULE};
use umtk::io::{read_json, read_png16, read_stack, write_json, write_png16, write_stack, MaterialMeta, META_FILE, SCAN_FILE};
use umtk::material::ImageGrid;
use umtk::metrics::{detect_artifacts, evaluate, write_metric_csv, ArtifactThresholds};
use umtk::predictor::{train, LossWeights, Mode, PredictorConfig, PredictorWeights, TrainingPair};
use umtk::render::{sample_render_set, shade, Direction, RenderSet, DEFAULT_RENDER_SET_SEED, DEFAULT_RENDER_SET_SIZE};
use umtk::synth::{load_dataset, make_dataset, save_dataset, MaterialFamily, DEFAULT_PPI, DEFAULT_SIZE};
use umtk::uncertainty::{
    build_report, mc_sample, write_report, DEFAULT_DROPOUT_RATE, DEFAULT_EPS, DEFAULT_MC_SAMPLES, NEUTRAL_GREY,
};
use umtk::{Error, Result, Vec3};

const CONFIG_FILE: &str = "config.json";
const WEIGHTS_FILE: &str = "weights.umtk";

#[derive(Parser, Debug)]
#[command(name = "umtk", version, about = "Material map estimation with render-space uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
enum Command {
    /// Generate a family-stratified synthetic dataset.
    Synth(SynthArgs),
    /// Train the patch predictor on a dataset's train split.
    Train(TrainArgs),
    /// Predict a map stack from a scan.
    Predict(PredictArgs),
    /// Compare an estimated stack against ground truth.
    Metrics(MetricsArgs),
    /// Monte-Carlo dropout uncertainty maps and sigma_BRDF.
    Uncertainty(UncertaintyArgs),
    /// Run the artifact detector on a stack.
    Artifact(ArtifactArgs),
    /// Active-learning experiment over a dataset.
    Active(ActiveArgs),
    /// Render a stack under one light/view pair.
    Render(RenderArgs),
    /// Replay a `config.json` written by another command.
    #[serde(skip)]
    Rerun(RerunArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct SynthArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_SIZE)]
    size: usize,
    #[arg(long, default_value_t = DEFAULT_PPI)]
    ppi: f64,
    /// Comma-separated family names; all six when omitted.
    #[arg(long, value_delimiter = ',', default_values_t = MaterialFamily::ALL.map(|f| f.name().to_string()))]
    families: Vec<String>,
    #[arg(long, default_value_t = 20)]
    per_family: usize,
}

/// Predictor hyperparameters shared by `train` and `active`.
#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct PredictorArgs {
    #[arg(long, default_value_t = 2)]
    patch_radius: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![64usize, 64, 64])]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_DROPOUT_RATE)]
    dropout: f64,
    #[arg(long, default_value_t = 3e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_pixels: usize,
    #[arg(long, default_value_t = 200)]
    batches_per_epoch: usize,
    /// Loss weights for normals, specular and roughness.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 1.0, 1.0])]
    loss_weights: Vec<f64>,
}

impl PredictorArgs {
    fn config(&self, seed: u64) -> Result<PredictorConfig> {
        let [normals, specular, roughness] = self.loss_weights[..] else {
            return Err(Error::InvalidValue("--loss-weights needs three values".into()));
        };
        let cfg = PredictorConfig {
            patch_radius: self.patch_radius,
            hidden_widths: self.hidden.clone(),
            dropout_rate: self.dropout,
            map_loss_weights: LossWeights { normals, specular, roughness },
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_pixels: self.batch_pixels,
            batches_per_epoch: self.batches_per_epoch,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct TrainArgs {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    predictor: PredictorArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct PredictArgs {
    /// Scan PNG or a material directory containing `scan.png`.
    #[arg(long)]
    input: PathBuf,
    /// Weights file or a `train` output directory.
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Draw one stochastic pass with this seed instead of the deterministic one.
    #[arg(long)]
    seed: Option<u64>,
    /// Pixel density of a bare PNG input.
    #[arg(long, default_value_t = DEFAULT_PPI)]
    ppi: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct RenderSetArgs {
    /// Light/view pair file; the sampled default set when omitted.
    #[arg(long)]
    render_set: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RENDER_SET_SIZE)]
    render_set_size: usize,
    #[arg(long, default_value_t = DEFAULT_RENDER_SET_SEED)]
    render_set_seed: u64,
}

impl RenderSetArgs {
    fn load(&self) -> Result<RenderSet> {
        match &self.render_set {
            Some(p) => RenderSet::read(p),
            None => sample_render_set(self.render_set_size, self.render_set_seed),
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct MetricsArgs {
    /// Ground-truth material directory (stack, `scan.png`, `meta.json`).
    #[arg(long)]
    input: PathBuf,
    /// Directory with the estimated stack.
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    render_set: RenderSetArgs,
    /// Artifact threshold JSON; the built-in defaults when omitted.
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PPI)]
    ppi: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct UncertaintyArgs {
    /// Scan PNG or a material directory containing `scan.png`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MC_SAMPLES)]
    mc_samples: usize,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    /// Override the dropout rate stored with the weights.
    #[arg(long)]
    dropout: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    render_set: RenderSetArgs,
    #[arg(long, default_value_t = DEFAULT_PPI)]
    ppi: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct ArtifactArgs {
    /// Directory holding the input scan (`scan.png`, `meta.json`).
    #[arg(long)]
    input: PathBuf,
    /// Directory with the stack to check; `--input` when omitted.
    #[arg(long)]
    stack: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PPI)]
    ppi: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct ActiveArgs {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Master seeds: a comma list (`0,1,2`) or a half-open range (`0..5`).
    #[arg(long, value_parser = parse_seeds)]
    seeds: Seeds,
    /// Comma-separated strategies (`sigma_brdf`, `sigma_normals`,
    /// `sigma_spec`, `sigma_rough`, `random`, `random:<seed>`).
    #[arg(long, value_delimiter = ',', default_values_t = vec!["sigma_brdf".to_string(), "random".to_string()])]
    strategy: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SCHEDULE.to_vec())]
    schedule: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_MC_SAMPLES)]
    mc_samples: usize,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value_t = DEFAULT_RENDER_SET_SIZE)]
    render_set_size: usize,
    #[arg(long, default_value_t = DEFAULT_RENDER_SET_SEED)]
    render_set_seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    predictor: PredictorArgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> std::result::Result<Seeds, String> {
    let bad = || format!("invalid seed list {s:?}");
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        (a..b).collect()
    } else {
        s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect::<std::result::Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(Seeds(seeds))
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct RenderArgs {
    /// Directory with the stack; its `scan.png` is the albedo unless `--grey`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Light direction `x,y,z`.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    light: [f64; 3],
    /// View direction `x,y,z`.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true, default_value = "0,0,1")]
    view: [f64; 3],
    /// Use the constant grey albedo instead of the scan.
    #[arg(long)]
    grey: bool,
    #[arg(long, default_value_t = DEFAULT_PPI)]
    ppi: f64,
}

fn parse_vec3(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s.split(',').map(|t| t.trim().parse()).collect::<std::result::Result<_, _>>().map_err(|e| format!("{e}"))?;
    v.try_into().map_err(|_| format!("expected x,y,z, got {s:?}"))
}

#[derive(Args, Debug, Clone)]
struct RerunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl Command {
    fn output(&self) -> Option<&Path> {
        match self {
            Command::Synth(a) => Some(&a.output),
            Command::Train(a) => Some(&a.output),
            Command::Predict(a) => Some(&a.output),
            Command::Metrics(a) => Some(&a.output),
            Command::Uncertainty(a) => Some(&a.output),
            Command::Artifact(a) => Some(&a.output),
            Command::Active(a) => Some(&a.output),
            Command::Render(a) => Some(&a.output),
            Command::Rerun(_) => None,
        }
    }

    fn set_output(&mut self, out: PathBuf) {
        match self {
            Command::Synth(a) => a.output = out,
            Command::Train(a) => a.output = out,
            Command::Predict(a) => a.output = out,
            Command::Metrics(a) => a.output = out,
            Command::Uncertainty(a) => a.output = out,
            Command::Artifact(a) => a.output = out,
            Command::Active(a) => a.output = out,
            Command::Render(a) => a.output = out,
            Command::Rerun(_) => {}
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

/// Pixel density from a sibling `meta.json`, else `fallback`.
fn ppi_of(dir: &Path, fallback: f64) -> Result<f64> {
    let meta = dir.join(META_FILE);
    if meta.is_file() {
        Ok(read_json::<MaterialMeta>(&meta)?.ppi)
    } else {
        Ok(fallback)
    }
}

/// A scan PNG, or the `scan.png` of a material directory.
fn read_scan(input: &Path, ppi: f64) -> Result<ImageGrid> {
    if input.is_dir() {
        read_png16(&input.join(SCAN_FILE), ppi_of(input, ppi)?)
    } else {
        let dir = input.parent().unwrap_or(Path::new("."));
        read_png16(input, ppi_of(dir, ppi)?)
    }
}

fn read_weights(path: &Path) -> Result<PredictorWeights> {
    if path.is_dir() {
        PredictorWeights::load(&path.join(WEIGHTS_FILE))
    } else {
        PredictorWeights::load(path)
    }
}

fn read_thresholds(path: &Option<PathBuf>) -> Result<ArtifactThresholds> {
    match path {
        Some(p) => ArtifactThresholds::read(p),
        None => Ok(ArtifactThresholds::default()),
    }
}

fn execute(cmd: &Command) -> Result<()> {
    if let Some(out) = cmd.output() {
        create_dir(out)?;
        write_json(&out.join(CONFIG_FILE), cmd)?;
    }
    match cmd {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Uncertainty(a) => cmd_uncertainty(a),
        Command::Artifact(a) => cmd_artifact(a),
        Command::Active(a) => cmd_active(a),
        Command::Render(a) => cmd_render(a),
        Command::Rerun(a) => {
            let mut inner: Command = read_json(&a.config)?;
            if let Some(out) = &a.output {
                inner.set_output(out.clone());
            }
            execute(&inner)
        }
    }
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let families = a.families.iter().map(|f| f.parse()).collect::<Result<Vec<MaterialFamily>>>()?;
    let d = make_dataset(a.per_family, &families, a.seed, a.size, a.ppi)?;
    save_dataset(&a.output, &d)?;
    println!("{} materials ({} train, {} test) in {}", d.samples.len(), d.train.len(), d.test.len(), a.output.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = a.predictor.config(a.seed)?;
    let d = load_dataset(&a.input)?;
    let pairs: Vec<TrainingPair<'_>> =
        d.train_samples().map(|s| TrainingPair { input: &s.scan, target: &s.gt }).collect();
    let (w, curve) = train(&pairs, &cfg)?;
    w.save(&a.output.join(WEIGHTS_FILE))?;
    let path = a.output.join("loss.csv");
    let text: String = std::iter::once("epoch,loss\n".to_string())
        .chain(curve.iter().enumerate().map(|(i, l)| format!("{i},{l}\n")))
        .collect();
    std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
    println!("trained on {} materials, final loss {:.6}", pairs.len(), curve.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let w = read_weights(&a.weights)?;
    let scan = read_scan(&a.input, a.ppi)?;
    let mode = a.seed.map(Mode::Stochastic).unwrap_or(Mode::Deterministic);
    let m = w.predict(&scan, mode)?;
    write_stack(&a.output, &m)
}

fn cmd_metrics(a: &MetricsArgs) -> Result<()> {
    let ppi = ppi_of(&a.input, a.ppi)?;
    let gt = read_stack(&a.input, ppi)?;
    let est = read_stack(&a.estimate, ppi)?;
    let scan = read_png16(&a.input.join(SCAN_FILE), ppi)?;
    let s = a.render_set.load()?;
    let k = ImageGrid::constant(gt.width(), gt.height(), 1, NEUTRAL_GREY, ppi)?;
    let name = a.input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let row = evaluate(&name, &gt, &est, &scan, &s, &k, &read_thresholds(&a.thresholds)?)?;
    write_json(&a.output.join("metrics.json"), &row)?;
    write_metric_csv(&a.output.join("metrics.csv"), std::slice::from_ref(&row))?;
    println!("l_brdf {:.6} angular {:.4} deg", row.l_brdf, row.angular_deg);
    Ok(())
}

fn cmd_uncertainty(a: &UncertaintyArgs) -> Result<()> {
    let mut w = read_weights(&a.weights)?;
    if let Some(p) = a.dropout {
        let cfg = PredictorConfig { dropout_rate: p, ..w.config().clone() };
        w = PredictorWeights::from_params(cfg, w.params().to_vec())?;
    }
    let scan = read_scan(&a.input, a.ppi)?;
    let s = a.render_set.load()?;
    let u = mc_sample(&w, &scan, a.mc_samples, a.seed)?;
    let k = ImageGrid::constant(scan.width(), scan.height(), 1, NEUTRAL_GREY, scan.ppi())?;
    let report = build_report(&u, &s, &k, a.eps)?;
    let summary = write_report(&a.output, &report, &u, &s, a.eps)?;
    println!("sigma_brdf {}", summary.sigma_brdf);
    Ok(())
}

fn cmd_artifact(a: &ArtifactArgs) -> Result<()> {
    let ppi = ppi_of(&a.input, a.ppi)?;
    let scan = read_png16(&a.input.join(SCAN_FILE), ppi)?;
    let stack = read_stack(a.stack.as_deref().unwrap_or(&a.input), ppi)?;
    let report = detect_artifacts(&scan, &stack, &read_thresholds(&a.thresholds)?)?;
    write_json(&a.output.join("artifact.json"), &report)?;
    println!("artifact {}", report.stack_verdict);
    Ok(())
}

fn cmd_active(a: &ActiveArgs) -> Result<()> {
    let strategies = a.strategy.iter().map(|s| s.parse()).collect::<Result<Vec<Strategy>>>()?;
    let d = load_dataset(&a.input)?;
    let scoring = ScoreConfig {
        mc_samples: a.mc_samples,
        eps: a.eps,
        render_set_size: a.render_set_size,
        render_set_seed: a.render_set_seed,
    };
    let mut all = Vec::new();
    for &strategy in &strategies {
        let cfg = LoopConfig {
            predictor: a.predictor.config(0)?,
            schedule: a.schedule.clone(),
            strategy,
            scoring: scoring.clone(),
        };
        let runs = a.seeds.0.iter().map(|&seed| run_loop(&d, &cfg, seed)).collect::<Result<Vec<_>>>()?;
        let log = RunLog { strategy: strategy.to_string(), seeds: a.seeds.0.clone(), schedule: a.schedule.clone(), runs };
        write_json(&a.output.join(format!("active_{}.json", strategy.name())), &log)?;
        all.extend(log.runs);
    }
    write_csv(&a.output.join("active.csv"), &all)
}

fn cmd_render(a: &RenderArgs) -> Result<()> {
    let dir = |[x, y, z]: [f64; 3]| Direction::new(Vec3::new(x, y, z));
    let (l, v) = (dir(a.light)?, dir(a.view)?);
    let ppi = ppi_of(&a.input, a.ppi)?;
    let m = read_stack(&a.input, ppi)?;
    let albedo = if a.grey {
        ImageGrid::constant(m.width(), m.height(), 1, NEUTRAL_GREY, ppi)?
    } else {
        read_png16(&a.input.join(SCAN_FILE), ppi)?
    };
    let r = shade(&m, &albedo, l, v)?;
    let cos = umtk::render::cosine_weight(l);
    let data = r.values().iter().map(|x| (x * cos).clamp(0.0, 1.0)).collect();
    write_png16(&a.output.join("render.png"), &ImageGrid::new(r.width(), r.height(), r.channels(), data, ppi)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
