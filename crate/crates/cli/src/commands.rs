//! Subcommand definitions and their implementations.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use crossview::datapipe::{generate, load_dataset, write_dataset, GenConfig, SampleRecord, Split};
use crossview::dit::{Direction, Dit, DitConfig, ModelCheckpoint};
use crossview::flowmatch::{train, LrSchedule, SampleConfig, TrainConfig, TrainSample};
use crossview::signal::Keyframe;

use crate::engine::{Engine, LoadedModel, Method, TransformRequest};
use crate::error::CliError;
use crate::evaluate::{evaluate, EvalMethod, EvalOptions};
use crate::service;

#[derive(Debug, Parser)]
#[command(name = "crossview", version, about = "Cross-view box trajectory transformation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic paired-view dataset.
    GenData(GenDataArgs),
    /// Train a model for one direction.
    Train(TrainArgs),
    /// Compare methods on the eval split.
    Eval(EvalArgs),
    /// Transform one record and print the response JSON.
    Transform(TransformArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub scenes: usize,
    #[arg(long, default_value_t = 10)]
    pub paths_per_scene: usize,
    #[arg(long, default_value_t = 24)]
    pub frames: usize,
    /// Side of the point-track grid.
    #[arg(long, default_value_t = 12)]
    pub grid: usize,
    #[arg(long, default_value_t = 20)]
    pub dct_order: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.025)]
    pub eval_fraction: f64,
    #[arg(long, default_value_t = 0.02)]
    pub val_fraction: f64,
    /// Camera path magnitude multiplier.
    #[arg(long, default_value_t = 1.0)]
    pub magnitude: f64,
    /// Rendering threads (output does not depend on it).
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

impl GenDataArgs {
    pub fn config(&self) -> GenConfig {
        GenConfig {
            n_scenes: self.scenes,
            paths_per_scene: self.paths_per_scene,
            frames: self.frames,
            grid: self.grid,
            dct_order: self.dct_order,
            seed: self.seed,
            eval_fraction: self.eval_fraction,
            val_fraction: self.val_fraction,
            path_magnitude: self.magnitude,
            workers: self.workers,
            ..GenConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelPreset {
    /// Small model for CPU training.
    Desk,
    /// Full-width eight-layer model.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Cosine,
    Constant,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "f2v", value_parser = parse_direction)]
    pub direction: Direction,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss curve CSV path (defaults to the checkpoint path with `.loss.csv`).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModelPreset::Desk)]
    pub preset: ModelPreset,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long, default_value_t = 4000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1.2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Cosine)]
    pub schedule: ScheduleArg,
    /// Validation IoU every this many steps (0 disables).
    #[arg(long, default_value_t = 500)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 32)]
    pub eval_samples: usize,
    /// Print a progress line every this many steps (0 silences).
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
}

impl TrainArgs {
    pub fn model_config(&self, data: &crossview::datapipe::GenConfig) -> DitConfig {
        let base = match self.preset {
            ModelPreset::Desk => DitConfig::desk(),
            ModelPreset::Full => DitConfig::default(),
        };
        DitConfig {
            layers: self.layers.unwrap_or(base.layers),
            model_dim: self.dim.unwrap_or(base.model_dim),
            heads: self.heads.unwrap_or(base.heads),
            frames: data.frames,
            grid: data.grid,
            dct_order: data.dct_order,
            direction: self.direction,
            ..base
        }
    }

    pub fn train_config(&self, model: &DitConfig) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            seed: self.seed,
            eval_every: self.eval_every,
            eval_samples: self.eval_samples,
            dropout: model.dropout,
            schedule: match self.schedule {
                ScheduleArg::Cosine => LrSchedule::Cosine,
                ScheduleArg::Constant => LrSchedule::Constant,
            },
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint for the model methods.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated methods.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "model,interpolation,warp_corners,warp_center,noisy-high,noisy-low"
    )]
    pub methods: Vec<EvalMethod>,
    #[arg(long, default_value = "f2v", value_parser = parse_direction)]
    pub direction: Direction,
    /// Sampler steps for the model methods.
    #[arg(long, default_value_t = 28)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report JSON path (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-sequence CSV path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Evaluate only the first N eval records.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoints to load (one per direction).
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    /// Request JSON file; overrides the flags below.
    #[arg(long)]
    pub request: Option<PathBuf>,
    #[arg(long)]
    pub record: Option<String>,
    #[arg(long, default_value = "model", value_parser = parse_method)]
    pub method: Method,
    /// Keyframes as a JSON list of {"frame_index", "box"} objects.
    #[arg(long)]
    pub keyframes: Option<String>,
    #[arg(long, default_value = "f2v", value_parser = parse_direction)]
    pub direction: Direction,
    #[arg(long, default_value_t = 28)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub clamp_output: bool,
    /// Response JSON path (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    s.parse()
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
            }
            fs::write(p, text).map_err(|e| CliError::runtime(format!("{}: {e}", p.display())))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_records(dir: &Path, splits: &[Split]) -> Result<(crossview::datapipe::DatasetManifest, Vec<SampleRecord>), CliError> {
    let ds = load_dataset(dir, splits).map_err(CliError::runtime)?;
    Ok((ds.manifest, ds.records))
}

fn load_models(paths: &[PathBuf]) -> Result<Vec<LoadedModel>, CliError> {
    paths
        .iter()
        .map(|p| LoadedModel::load(p).map_err(|e| CliError::runtime(format!("{}: {e}", p.display()))))
        .collect()
}

pub fn gen_data(args: &GenDataArgs) -> Result<(), CliError> {
    let cfg = args.config();
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let ds = generate(&cfg).map_err(CliError::runtime)?;
    write_dataset(&ds, &args.out).map_err(CliError::runtime)?;
    let m = &ds.manifest;
    eprintln!(
        "{} candidates, {} accepted (train {}, val {}, eval {}), rejected {:?}",
        m.candidates,
        m.counts.train + m.counts.val + m.counts.eval,
        m.counts.train,
        m.counts.val,
        m.counts.eval,
        m.rejected
    );
    Ok(())
}

pub fn train_samples(records: &[SampleRecord], split: Split, direction: Direction) -> Vec<TrainSample> {
    records
        .iter()
        .filter(|r| r.split == split)
        .map(|r| r.train_sample(direction))
        .collect()
}

pub fn run_train(args: &TrainArgs) -> Result<(), CliError> {
    let (manifest, records) = load_records(&args.data, &[Split::Train, Split::Val])?;
    let model_cfg = args.model_config(&manifest.generation);
    model_cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let cfg = args.train_config(&model_cfg);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let data = train_samples(&records, Split::Train, args.direction);
    let val = train_samples(&records, Split::Val, args.direction);
    let model = Dit::<f32>::new(model_cfg, args.seed).map_err(CliError::runtime)?;
    eprintln!(
        "training {} on {} samples ({} val), {} parameters",
        args.direction,
        data.len(),
        val.len(),
        model.parameter_count()
    );
    let log_every = args.log_every;
    let (ckpt, curve) = train(model, &data, &val, &cfg, |p| {
        if log_every > 0 && (p.step % log_every == 0 || p.eval_iou.is_some()) {
            match p.eval_iou {
                Some(iou) => eprintln!("step {:>6}  loss {:.5}  val_iou {:.4}", p.step, p.loss, iou),
                None => eprintln!("step {:>6}  loss {:.5}", p.step, p.loss),
            }
        }
    })
    .map_err(CliError::runtime)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
    }
    ckpt.save(&args.out).map_err(CliError::runtime)?;
    let csv = args.loss_csv.clone().unwrap_or_else(|| args.out.with_extension("loss.csv"));
    write_output(Some(&csv), &curve.to_csv())?;
    Ok(())
}

pub fn run_eval(args: &EvalArgs) -> Result<(), CliError> {
    if args.methods.is_empty() {
        return Err(CliError::Usage("--methods is empty".into()));
    }
    if args.steps == 0 {
        return Err(CliError::Usage("--steps must be >= 1".into()));
    }
    let (_, mut records) = load_records(&args.data, &[Split::Eval])?;
    if let Some(n) = args.limit {
        records.truncate(n);
    }
    let model = match &args.checkpoint {
        Some(p) => Some(ModelCheckpoint::load(p).map_err(|e| CliError::runtime(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let opts = EvalOptions {
        direction: args.direction,
        sampler: SampleConfig {
            num_steps: args.steps,
            seed: args.seed,
            clamp_output: false,
        },
        noise_seed: args.seed,
        ..EvalOptions::default()
    };
    let cmp = evaluate(&records, &args.methods, model.as_ref().map(|c| &c.model), &opts).map_err(CliError::runtime)?;
    eprint!("{}", cmp.table());
    let mut json = serde_json::to_string_pretty(&cmp).map_err(CliError::runtime)?;
    json.push('\n');
    write_output(args.out.as_deref(), &json)?;
    if let Some(csv) = &args.csv {
        write_output(Some(csv), &cmp.to_csv())?;
    }
    Ok(())
}

pub fn transform_request(args: &TransformArgs) -> Result<TransformRequest, CliError> {
    if let Some(path) = &args.request {
        let bytes = fs::read(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        return service::parse_request(&bytes).map_err(|e| CliError::Usage(e.to_string()));
    }
    let record_id = args
        .record
        .clone()
        .ok_or_else(|| CliError::Usage("--record or --request is required".into()))?;
    let keyframes = match &args.keyframes {
        Some(text) => Some(
            serde_json::from_str::<Vec<Keyframe>>(text)
                .map_err(|e| CliError::Usage(format!("--keyframes: {e}")))?,
        ),
        None => None,
    };
    Ok(TransformRequest {
        record_id: Some(record_id),
        inline: None,
        keyframes,
        direction: args.direction,
        sampler: SampleConfig {
            num_steps: args.steps,
            seed: args.seed,
            clamp_output: args.clamp_output,
        },
        method: args.method,
    })
}

pub fn run_transform(args: &TransformArgs) -> Result<(), CliError> {
    let req = transform_request(args)?;
    let (_, records) = load_records(&args.data, &[])?;
    let engine = Engine::new(records, load_models(&args.checkpoint)?).map_err(CliError::Usage)?;
    let resp = engine.transform(&req)?;
    let mut json = serde_json::to_string_pretty(&resp).map_err(CliError::runtime)?;
    json.push('\n');
    write_output(args.out.as_deref(), &json)
}

pub fn run_serve(args: &ServeArgs) -> Result<(), CliError> {
    let (_, records) = load_records(&args.data, &[Split::Eval])?;
    let engine = Engine::new(records, load_models(&args.checkpoint)?).map_err(CliError::Usage)?;
    let rt = tokio::runtime::Runtime::new().map_err(CliError::runtime)?;
    rt.block_on(service::serve(Arc::new(engine), SocketAddr::new(args.host, args.port)))
        .map_err(CliError::runtime)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Transform(a) => run_transform(a),
        Command::Serve(a) => run_serve(a),
    }
}
