//! Command-line front end used by the `dgn` binary.
//!
//! Every command prints its effective configuration as one JSON line
//! before doing any work. Exit status: 0 success, 1 usage or configuration
//! error, 2 data error, 3 numeric failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::analysis::{self, PixelScale, SweepSpec};
use crate::data::checkpoint::{self, Checkpoint, Precision};
use crate::data::synth::{synth_generate, FactorSampler, ShapeKind, SynthSpec};
use crate::data::{self, emit_grid, Dataset};
use crate::error::{Error, Result};
use crate::inference::{LangevinConfig, LatentKind};
use crate::model::{ArchitectureConfig, DeformableGenerator};
use crate::seeding::{self, Stream};
use crate::training::{self, LrSchedule, Mode, Optimizer, TrainConfig, Trainer};
use crate::vae::{Vae, VaeTrainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Environment variable that supplies `--out` when the flag is absent.
pub const OUT_ENV: &str = "DGN_OUT";

#[derive(Debug, Parser)]
#[command(name = "dgn", version, about = "Deformable generator networks")]
pub struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV, default_value = "out")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Render a labelled synthetic shape dataset.
    Synth(SynthArgs),
    /// Train a model on an image directory.
    Train(TrainArgs),
    /// Infer latents for every image in a directory.
    Infer(InferArgs),
    /// Sweep one latent dimension and write the images as a grid.
    Interpolate(InterpolateArgs),
    /// Recombine the appearance of one image with the geometry of another.
    Swap(SwapArgs),
    /// Covariance responses of latent dimensions against a labelled factor.
    Covariance(CovarianceArgs),
    /// Reconstruction error of held-out images.
    Reconstruct(ReconstructArgs),
    /// Fine-tune the appearance generator on new data with geometry frozen.
    Transfer(TransferArgs),
    /// Warp an outside image with fields from a geometric sweep.
    WarpApply(WarpApplyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Full,
    Tiny8,
    Tiny16,
    Tiny32,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorArg {
    App,
    Geo,
}

impl From<VectorArg> for LatentKind {
    fn from(v: VectorArg) -> Self {
        match v {
            VectorArg::App => LatentKind::Appearance,
            VectorArg::Geo => LatentKind::Geometric,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Abp,
    Vae,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleArg {
    Unit,
    Byte,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeArg {
    Ellipse,
    Rectangle,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Number of images to render.
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Comma-separated horizontal offsets. When given, only hue and
    /// horizontal offset vary; otherwise every factor varies.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub levels: Option<Vec<f64>>,
    /// Fix the hue (degrees) instead of sampling it.
    #[arg(long)]
    pub hue: Option<f64>,
    /// Shape to draw.
    #[arg(long, value_enum, default_value_t = ShapeArg::Ellipse)]
    pub shape: ShapeArg,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct LangevinArgs {
    /// Langevin step size delta.
    #[arg(long, default_value_t = 0.1)]
    pub step_size: f64,
    /// Disable the Langevin noise term (gradient ascent on the posterior).
    #[arg(long)]
    pub no_noise: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    /// Architecture preset; the flags below override its fields.
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    pub preset: Preset,
    /// Appearance-to-geometric filter ratio.
    #[arg(long, default_value_t = 0.625)]
    pub alpha: f64,
    /// Appearance latent size (preset value when absent).
    #[arg(long)]
    pub d_a: Option<usize>,
    /// Geometric latent size (preset value when absent).
    #[arg(long)]
    pub d_g: Option<usize>,
    /// Comma-separated geometric generator widths (preset value when absent).
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    /// Observation noise standard deviation.
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
    /// Displacement scale in pixels.
    #[arg(long, default_value_t = 4.0)]
    pub max_displacement: f64,
}

impl ModelArgs {
    fn arch(&self) -> ArchitectureConfig {
        let mut a = match self.preset {
            Preset::Full => ArchitectureConfig::full(),
            Preset::Tiny8 => ArchitectureConfig::tiny8(),
            Preset::Tiny16 => ArchitectureConfig::tiny16(),
            Preset::Tiny32 => ArchitectureConfig::tiny32(),
        };
        a.alpha = self.alpha;
        if let Some(d) = self.d_a {
            a.d_a = d;
        }
        if let Some(d) = self.d_g {
            a.d_g = d;
        }
        if let Some(w) = &self.widths {
            a.geometric_widths = w.clone();
        }
        a
    }
}

#[derive(Debug, Args, Serialize)]
pub struct OptimArgs {
    /// Training iterations (the total count when resuming).
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Images per minibatch.
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Learning rate.
    #[arg(long, default_value_t = 1e-4, allow_hyphen_values = true)]
    pub lr: f64,
    /// Multiply the learning rate by --decay-factor every this many iterations.
    #[arg(long)]
    pub decay_every: Option<usize>,
    /// Learning-rate multiplier applied every --decay-every iterations.
    #[arg(long, default_value_t = 0.5)]
    pub decay_factor: f64,
    /// Use adaptive moment estimation instead of plain gradient ascent.
    #[arg(long)]
    pub adam: bool,
    /// Langevin rounds per training iteration.
    #[arg(long, default_value_t = 10)]
    pub langevin_steps: usize,
    #[command(flatten)]
    pub langevin: LangevinArgs,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write a checkpoint every this many iterations.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Float width of saved checkpoints (f64 for exact resume).
    #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
    pub precision: PrecisionArg,
}

impl OptimArgs {
    fn config(&self, mode: Mode, out: &Path) -> TrainConfig {
        TrainConfig {
            iterations: self.iters,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            schedule: match self.decay_every {
                Some(every) => LrSchedule::StepDecay {
                    every,
                    factor: self.decay_factor,
                },
                None => LrSchedule::Constant,
            },
            optimizer: if self.adam { Optimizer::adam() } else { Optimizer::Sgd },
            langevin: LangevinConfig {
                step_size: self.langevin.step_size,
                steps: self.langevin_steps,
                noise: !self.langevin.no_noise,
                seed: self.seed,
            },
            mode,
            seed: self.seed,
            freeze_geometry: false,
            record_wall_time: false,
            checkpoint_every: self.checkpoint_every,
            checkpoint_dir: self.checkpoint_every.map(|_| out.to_path_buf()),
        }
    }

    fn precision(&self) -> Precision {
        match self.precision {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Directory of training images (and optional factors.csv).
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Maximum likelihood with Langevin inference, or the variational encoder.
    #[arg(long, value_enum, default_value_t = ModeArg::Abp)]
    pub mode: ModeArg,
    /// Half-width of the latent sweeps written after training.
    #[arg(long, default_value_t = analysis::DEFAULT_GAMMA)]
    pub gamma: f64,
    /// Continue from this checkpoint instead of a fresh model.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct InferenceArgs {
    /// Langevin rounds per image.
    #[arg(long, default_value_t = crate::inference::UNSEEN_IMAGE_STEPS)]
    pub steps: usize,
    #[command(flatten)]
    pub langevin: LangevinArgs,
    /// Random seed for the chain start and noise.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl InferenceArgs {
    fn config(&self) -> LangevinConfig {
        LangevinConfig {
            step_size: self.langevin.step_size,
            steps: self.steps,
            noise: !self.langevin.no_noise,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Directory of images.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub inference: InferenceArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    /// Latent vector to sweep.
    #[arg(long, value_enum)]
    pub vector: VectorArg,
    /// Dimension index within that vector.
    #[arg(long)]
    pub dim: usize,
    /// Half-width of the sweep.
    #[arg(long, default_value_t = analysis::DEFAULT_GAMMA)]
    pub gamma: f64,
    /// Intervals in the sweep (samples = steps + 1).
    #[arg(long, default_value_t = analysis::DEFAULT_SWEEP_STEPS)]
    pub sweep_steps: usize,
    /// Comma-separated value of the other latent (zero when absent).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub fixed: Option<Vec<f64>>,
}

impl SweepArgs {
    fn spec(&self) -> SweepSpec {
        SweepSpec {
            vector: self.vector.into(),
            dim: self.dim,
            gamma: self.gamma,
            steps: self.sweep_steps,
            fixed: self.fixed.clone(),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct InterpolateArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub sweep: SweepArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SwapArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Appearance donor image.
    #[arg(long)]
    pub a: PathBuf,
    /// Geometry donor image.
    #[arg(long)]
    pub b: PathBuf,
    #[command(flatten)]
    pub inference: InferenceArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct CovarianceArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Directory with images and factors.csv.
    #[arg(long)]
    pub data: PathBuf,
    /// Factor column to correlate against.
    #[arg(long, default_value = "tx")]
    pub factor: String,
    #[command(flatten)]
    pub inference: InferenceArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ReconstructArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Directory of held-out images.
    #[arg(long)]
    pub data: PathBuf,
    /// Pixel scale of the reported error.
    #[arg(long, value_enum, default_value_t = ScaleArg::Byte)]
    pub scale: ScaleArg,
    #[command(flatten)]
    pub inference: InferenceArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct TransferArgs {
    /// Source model checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Directory of images in the new domain.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct WarpApplyArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Image at model resolution.
    #[arg(long)]
    pub image: PathBuf,
    /// Geometric dimension to sweep.
    #[arg(long)]
    pub dim: usize,
    /// Half-width of the sweep.
    #[arg(long, default_value_t = analysis::DEFAULT_GAMMA)]
    pub gamma: f64,
    /// Intervals in the sweep (samples = steps + 1).
    #[arg(long, default_value_t = analysis::DEFAULT_SWEEP_STEPS)]
    pub sweep_steps: usize,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Argument(_) => EXIT_USAGE,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit status.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn effective_line(cli: &Cli, extra: serde_json::Value) -> Result<String> {
    let mut v = json!({
        "threads": cli.threads,
        "out": cli.out,
        "command": serde_json::to_value(&cli.command)?,
    });
    if let serde_json::Value::Object(m) = extra {
        for (k, val) in m {
            v[k] = val;
        }
    }
    Ok(serde_json::to_string(&v)?)
}

pub fn run(cli: &Cli) -> Result<()> {
    if cli.threads > 0 {
        // the pool can only be configured once per process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let out = &cli.out;
    let resolved = match &cli.command {
        Command::Train(a) => {
            let mode = match a.mode {
                ModeArg::Abp => Mode::Abp,
                ModeArg::Vae => Mode::Vae,
            };
            json!({ "arch": a.model.arch(), "train": a.optim.config(mode, out) })
        }
        Command::Transfer(a) => json!({ "train": TrainConfig { freeze_geometry: true, ..a.optim.config(Mode::Abp, out) } }),
        _ => json!({}),
    };
    println!("{}", effective_line(cli, resolved)?);
    std::fs::create_dir_all(out)?;
    match &cli.command {
        Command::Synth(a) => synth(a, out),
        Command::Train(a) => train(a, out),
        Command::Infer(a) => infer(a, out),
        Command::Interpolate(a) => interpolate(a, out),
        Command::Swap(a) => swap(a, out),
        Command::Covariance(a) => covariance(a, out),
        Command::Reconstruct(a) => reconstruct(a, out),
        Command::Transfer(a) => transfer(a, out),
        Command::WarpApply(a) => warp_apply(a, out),
    }
}

fn synth(a: &SynthArgs, out: &Path) -> Result<()> {
    let mut spec = match &a.levels {
        Some(levels) => SynthSpec::translation_hue(a.count, a.size, levels.clone(), a.seed),
        None => SynthSpec::varied(a.count, a.size, a.seed),
    };
    if let Some(h) = a.hue {
        spec.hue = FactorSampler::Fixed(h);
    }
    spec.shape = match a.shape {
        ShapeArg::Ellipse => ShapeKind::Ellipse,
        ShapeArg::Rectangle => ShapeKind::Rectangle,
    };
    let data = synth_generate(&spec)?;
    data.save_dir(out)?;
    println!("wrote {} images to {}", data.len(), out.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<Checkpoint> {
    checkpoint::load(path).map_err(|e| with_path(e, path))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    }
}

fn load_dataset(dir: &Path, size: usize) -> Result<Dataset> {
    data::load_dataset(dir, size).map_err(|e| with_path(e, dir))
}

fn load_image_dir(dir: &Path, size: usize) -> Result<Dataset> {
    data::load_image_dir(dir, size).map_err(|e| with_path(e, dir))
}

fn write_sweeps(model: &DeformableGenerator, gamma: f64, out: &Path) -> Result<()> {
    for (kind, d, tag) in [
        (LatentKind::Appearance, model.d_a(), "app"),
        (LatentKind::Geometric, model.d_g(), "geo"),
    ] {
        for dim in 0..d {
            let spec = SweepSpec {
                gamma,
                ..SweepSpec::new(kind, dim)
            };
            let imgs = analysis::interpolate_dimension(model, &spec)?;
            emit_grid(&imgs, imgs.len(), &out.join(format!("sweep-{tag}-{dim}.png")))?;
        }
    }
    Ok(())
}

fn train(a: &TrainArgs, out: &Path) -> Result<()> {
    let mode = match a.mode {
        ModeArg::Abp => Mode::Abp,
        ModeArg::Vae => Mode::Vae,
    };
    let config = a.optim.config(mode, out);
    let precision = a.optim.precision();
    let resumed = a.resume.as_deref().map(load_model).transpose()?;
    let arch = match &resumed {
        Some(c) => c.model.arch.clone(),
        None => a.model.arch(),
    };
    let data = load_dataset(&a.data, arch.image_size)?;
    let mut rng = seeding::rng(a.optim.seed, Stream::Init, 0, 0);
    let (ckpt, metrics) = match mode {
        Mode::Abp => {
            let mut trainer = match resumed {
                Some(c) => Trainer::from_checkpoint(c, config)?,
                None => Trainer::new(
                    DeformableGenerator::new(arch, a.model.sigma, a.model.max_displacement, &mut rng)?,
                    config,
                )?,
            };
            let metrics = trainer.run(&data)?;
            (trainer.to_checkpoint(), metrics)
        }
        Mode::Vae => {
            let mut trainer = match resumed {
                Some(c) => VaeTrainer::from_checkpoint(c, config)?,
                None => {
                    let model = DeformableGenerator::new(arch, a.model.sigma, a.model.max_displacement, &mut rng)?;
                    let mut erng = seeding::rng(a.optim.seed, Stream::Init, 1, 0);
                    VaeTrainer::new(Vae::new(model, false, &mut erng)?, config)?
                }
            };
            let metrics = trainer.run(&data)?;
            (trainer.to_checkpoint(), metrics)
        }
    };
    checkpoint::save_with(&ckpt, &out.join("model.dgn"), precision)?;
    training::write_metrics(&metrics, &out.join("metrics.csv"))?;
    write_sweeps(&ckpt.model, a.gamma, out)?;
    if let Some(last) = metrics.last() {
        println!("iteration {} mse {:.6}", last.iteration, last.mse);
    }
    Ok(())
}

fn infer(a: &InferArgs, out: &Path) -> Result<()> {
    let model = load_model(&a.ckpt)?.model;
    let data = load_image_dir(&a.data, model.arch.image_size)?;
    let latents = analysis::infer_latents(&model, &data.images, &a.inference.config())?;
    let mut w = csv::Writer::from_path(out.join("latents.csv"))?;
    let mut header = vec!["id".to_string()];
    header.extend((0..model.d_a()).map(|i| format!("za{i}")));
    header.extend((0..model.d_g()).map(|i| format!("zg{i}")));
    w.write_record(&header)?;
    for (id, z) in data.ids.iter().zip(&latents) {
        let mut rec = vec![id.clone()];
        rec.extend(z.za.iter().chain(&z.zg).map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn interpolate(a: &InterpolateArgs, out: &Path) -> Result<()> {
    let model = load_model(&a.ckpt)?.model;
    let imgs = analysis::interpolate_dimension(&model, &a.sweep.spec())?;
    emit_grid(&imgs, imgs.len(), &out.join("interpolate.png"))
}

fn swap(a: &SwapArgs, out: &Path) -> Result<()> {
    let model = load_model(&a.ckpt)?.model;
    let s = model.arch.image_size;
    let images = vec![data::load_image(&a.a, s)?, data::load_image(&a.b, s)?];
    let z = analysis::infer_latents(&model, &images, &a.inference.config())?;
    let row = vec![
        images[0].clone(),
        images[1].clone(),
        model.model_forward(&z[0])?,
        model.model_forward(&z[1])?,
        analysis::recombine_latents(&model, &z[0].za, &z[1].zg)?,
        analysis::recombine_latents(&model, &z[1].za, &z[0].zg)?,
    ];
    emit_grid(&row, row.len(), &out.join("swap.png"))
}

fn covariance(a: &CovarianceArgs, out: &Path) -> Result<()> {
    let model = load_model(&a.ckpt)?.model;
    let data = load_dataset(&a.data, model.arch.image_size)?;
    let r = analysis::covariance_response(&model, &data, &a.factor, &a.inference.config())?;
    let mut w = csv::Writer::from_path(out.join("covariance.csv"))?;
    w.write_record(["vector", "dim", "response"])?;
    for (tag, vals) in [("geo", &r.rg), ("app", &r.ra)] {
        for (i, v) in vals.iter().enumerate() {
            w.write_record([tag.to_string(), i.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    std::fs::write(out.join("covariance.json"), serde_json::to_string_pretty(&r)?)?;
    println!(
        "max geometric response {:.6}, max appearance response {:.6}",
        r.rg.iter().cloned().fold(0.0, f64::max),
        r.ra.iter().cloned().fold(0.0, f64::max)
    );
    Ok(())
}

fn reconstruct(a: &ReconstructArgs, out: &Path) -> Result<()> {
    let model = load_model(&a.ckpt)?.model;
    let data = load_image_dir(&a.data, model.arch.image_size)?;
    let scale = match a.scale {
        ScaleArg::Unit => PixelScale::Unit,
        ScaleArg::Byte => PixelScale::Byte,
    };
    let r = analysis::reconstruction_error(&model, &data, &a.inference.config(), scale)?;
    let mut w = csv::Writer::from_path(out.join("reconstruction.csv"))?;
    w.write_record(["id", "error"])?;
    for (id, e) in data.ids.iter().zip(&r.per_image) {
        w.write_record([id.clone(), e.to_string()])?;
    }
    w.write_record(["mean".to_string(), r.mean.to_string()])?;
    w.flush()?;
    println!("mean error {:.6} ({})", r.mean, r.convention());
    Ok(())
}

fn transfer(a: &TransferArgs, out: &Path) -> Result<()> {
    let ckpt = load_model(&a.ckpt)?;
    let data: Dataset = load_dataset(&a.data, ckpt.model.arch.image_size)?;
    let config = a.optim.config(Mode::Abp, out);
    let outcome = analysis::transfer_fine_tune(ckpt.model, &data, config)?;
    let mut saved = Checkpoint::new(outcome.model);
    saved.chains = outcome.chains;
    saved.iteration = outcome.metrics.len();
    saved.seed = a.optim.seed;
    checkpoint::save_with(&saved, &out.join("model.dgn"), a.optim.precision())?;
    training::write_metrics(&outcome.metrics, &out.join("metrics.csv"))
}

fn warp_apply(a: &WarpApplyArgs, out: &Path) -> Result<()> {
    let model = load_model(&a.ckpt)?.model;
    let image = data::load_image_raw(&a.image)?;
    let spec = SweepSpec {
        gamma: a.gamma,
        steps: a.sweep_steps,
        ..SweepSpec::new(LatentKind::Geometric, a.dim)
    };
    let imgs = analysis::apply_warp_external(&image, &model, &spec).map_err(|e| match e {
        Error::ResizeRequired { actual, expected, .. } => Error::ResizeRequired {
            path: a.image.display().to_string(),
            actual,
            expected,
        },
        other => other,
    })?;
    emit_grid(&imgs, imgs.len(), &out.join("warp.png"))
}
