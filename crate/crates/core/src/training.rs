//! Maximum-likelihood learning by alternating back-propagation: infer each
//! example's latents with a short warm-started Langevin run, then take a
//! gradient ascent step on the Monte Carlo log-likelihood gradient.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::checkpoint::{self, Checkpoint};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::{alternating_inference_with_rng, ChainStore, LangevinConfig};
use crate::model::{DeformableGenerator, LatentPair, Wants};
use crate::seeding::{self, Stream};
use crate::network::Network;
use crate::tensor::Tensor;
use crate::vae::{Vae, VaeTrainer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LrSchedule {
    Constant,
    /// Multiply the rate by `factor` every `every` iterations.
    StepDecay { every: usize, factor: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Optimizer {
    /// Plain gradient ascent.
    Sgd,
    /// Adaptive moment estimation.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Abp,
    Vae,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub optimizer: Optimizer,
    pub langevin: LangevinConfig,
    pub mode: Mode,
    pub seed: u64,
    /// Keep the geometric generator's parameters fixed.
    pub freeze_geometry: bool,
    /// Record wall-clock milliseconds in the metrics log. Off by default so
    /// that logs are byte-reproducible.
    pub record_wall_time: bool,
    /// Write `ckpt-<iteration>.dgn` every this many iterations.
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 100,
            batch_size: 64,
            learning_rate: 1e-4,
            schedule: LrSchedule::Constant,
            optimizer: Optimizer::Sgd,
            langevin: LangevinConfig::default(),
            mode: Mode::Abp,
            seed: 0,
            freeze_geometry: false,
            record_wall_time: false,
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate >= 0.0) {
            return Err(Error::Config("batch size must be positive and learning rate non-negative".into()));
        }
        if let LrSchedule::StepDecay { every, factor } = self.schedule {
            if every == 0 || !(factor > 0.0) {
                return Err(Error::Config("step decay needs every >= 1 and factor > 0".into()));
            }
        }
        self.langevin.validate()
    }

    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::StepDecay { every, factor } => {
                self.learning_rate * factor.powi((iteration / every) as i32)
            }
        }
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub mse: f64,
    pub log_joint_mean: f64,
    pub wall_ms: u64,
}

pub const METRICS_HEADER: &str = "iteration,mse,log_joint_mean,wall_ms";

impl IterationMetrics {
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{}",
            self.iteration, self.mse, self.log_joint_mean, self.wall_ms
        )
    }
}

pub fn write_metrics(metrics: &[IterationMetrics], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{METRICS_HEADER}")?;
    for m in metrics {
        writeln!(f, "{}", m.to_line())?;
    }
    f.flush()?;
    Ok(())
}

/// Batch statistics at the latents used for a gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchStats {
    /// Mean over examples of the per-pixel mean squared residual.
    pub mse: f64,
    /// Mean of `-|X - F|^2 / (2 sigma^2) - |Za|^2/2 - |Zg|^2/2`.
    pub log_joint_mean: f64,
}

/// Monte Carlo log-likelihood gradient over a batch with fixed latents:
/// `(1/N) sum_i (1/sigma^2) (X_i - F(Z_i)) dF/dtheta`, in
/// [`DeformableGenerator::params`] order. Examples are reduced in index order.
pub fn mc_gradient(
    model: &DeformableGenerator,
    images: &[&Tensor],
    latents: &[LatentPair],
) -> Result<(Vec<Tensor>, BatchStats)> {
    if images.is_empty() {
        return Err(Error::Argument("mc_gradient needs a non-empty batch".into()));
    }
    if images.len() != latents.len() {
        return Err(Error::Argument("one latent pair per image required".into()));
    }
    let per_example: Vec<Result<(Vec<Tensor>, f64, f64)>> = images
        .par_iter()
        .zip(latents.par_iter())
        .map(|(x, z)| example_gradient(model, x, z))
        .collect();
    let n = images.len() as f64;
    let mut total: Option<Vec<Tensor>> = None;
    let (mut mse, mut lj) = (0.0, 0.0);
    for r in per_example {
        let (g, m, l) = r?;
        mse += m;
        lj += l;
        match total.as_mut() {
            None => total = Some(g),
            Some(t) => t.iter_mut().zip(&g).for_each(|(a, b)| a.axpy(1.0, b)),
        }
    }
    let mut total = total.expect("non-empty batch");
    total.iter_mut().for_each(|t| t.scale(1.0 / n));
    Ok((
        total,
        BatchStats {
            mse: mse / n,
            log_joint_mean: lj / n,
        },
    ))
}

fn example_gradient(model: &DeformableGenerator, x: &Tensor, z: &LatentPair) -> Result<(Vec<Tensor>, f64, f64)> {
    let app = model.appearance_pass(&z.za)?;
    let geo = model.geometric_pass(&z.zg)?;
    let out = model.compose(&app, &geo)?;
    let mut resid = x.sub(&out)?;
    let sq = resid.norm_sq();
    let inv_var = 1.0 / (model.sigma * model.sigma);
    let prior: f64 = z.za.iter().chain(&z.zg).map(|v| v * v).sum();
    let log_joint = -0.5 * inv_var * sq - 0.5 * prior;
    resid.scale(inv_var);
    let g = model.backward(&app, &geo, &resid, Wants::PARAMS)?;
    let mut grads = g.appearance.expect("appearance grads");
    grads.extend(g.geometry.expect("geometry grads"));
    Ok((grads, sq / x.len() as f64, log_joint))
}

/// `theta += lr * grad` for every trainable tensor.
pub fn sgd_step(params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        p.axpy(lr, g);
    }
}

/// Optimiser state carried between iterations (moments for Adam).
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(params: &[&Tensor]) -> Self {
        OptimizerState {
            step: 0,
            first: params.iter().map(|p| p.zeros_like()).collect(),
            second: params.iter().map(|p| p.zeros_like()).collect(),
        }
    }

    /// Ascent step on `params` with `grads`; entries with `trainable[i] ==
    /// false` are left untouched.
    pub fn apply(
        &mut self,
        optimizer: &Optimizer,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
        trainable: &[bool],
        lr: f64,
    ) {
        self.step += 1;
        match *optimizer {
            Optimizer::Sgd => {
                for ((p, g), &t) in params.iter_mut().zip(grads).zip(trainable) {
                    if t {
                        p.axpy(lr, g);
                    }
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step as i32);
                let c2 = 1.0 - beta2.powi(self.step as i32);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    if !trainable[i] {
                        continue;
                    }
                    let m = self.first[i].data_mut();
                    let v = self.second[i].data_mut();
                    for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        *pv += lr * (*mv / c1) / ((*vv / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Resumable training state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: DeformableGenerator,
    pub chains: ChainStore,
    pub optimizer: OptimizerState,
    pub config: TrainConfig,
    /// Number of completed iterations.
    pub iteration: usize,
}

impl Trainer {
    pub fn new(model: DeformableGenerator, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = OptimizerState::new(&model.params());
        Ok(Trainer {
            model,
            chains: ChainStore::new(),
            optimizer,
            config,
            iteration: 0,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = match ckpt.optimizer {
            Some(o) => o,
            None => OptimizerState::new(&ckpt.model.params()),
        };
        Ok(Trainer {
            model: ckpt.model,
            chains: ckpt.chains,
            optimizer,
            config,
            iteration: ckpt.iteration,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            encoder: None,
            chains: self.chains.clone(),
            optimizer: Some(self.optimizer.clone()),
            iteration: self.iteration,
            seed: self.config.seed,
            mode: self.config.mode,
        }
    }

    fn trainable_mask(&self) -> Vec<bool> {
        let na = self.model.appearance_param_count();
        (0..self.model.params().len())
            .map(|i| i < na || !self.config.freeze_geometry)
            .collect()
    }

    /// One inference + learning iteration.
    pub fn step(&mut self, data: &Dataset) -> Result<IterationMetrics> {
        if data.is_empty() {
            return Err(Error::Argument("cannot train on an empty dataset".into()));
        }
        let started = Instant::now();
        let t = self.iteration as u64;
        let seed = self.config.seed;
        let idx = batch_window(data.len(), self.config.batch_size, self.iteration, seed);
        let (d_a, d_g) = (self.model.d_a(), self.model.d_g());
        let starts: Vec<LatentPair> = idx
            .iter()
            .map(|&i| {
                let mut rng = seeding::rng(seed, Stream::ChainInit, i as u64, 0);
                self.chains.chain_warm_start(&data.ids[i], d_a, d_g, &mut rng)
            })
            .collect();
        let model = &self.model;
        let lcfg = &self.config.langevin;
        let inferred: Vec<LatentPair> = idx
            .par_iter()
            .zip(starts.par_iter())
            .map(|(&i, start)| {
                let mut rng = seeding::rng(seed, Stream::Langevin, t, i as u64);
                alternating_inference_with_rng(&data.images[i], start, model, lcfg, &mut rng)
            })
            .collect::<Result<_>>()?;
        for (&i, z) in idx.iter().zip(&inferred) {
            self.chains.insert(data.ids[i].clone(), z.clone());
        }
        let images: Vec<&Tensor> = idx.iter().map(|&i| &data.images[i]).collect();
        let (grads, stats) = mc_gradient(&self.model, &images, &inferred)?;
        if !stats.mse.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            self.write_diagnostic();
            return Err(Error::Numeric(format!(
                "non-finite loss at iteration {}",
                self.iteration
            )));
        }
        let lr = self.config.learning_rate_at(self.iteration);
        let mask = self.trainable_mask();
        let mut params = self.model.params_mut();
        self.optimizer
            .apply(&self.config.optimizer, &mut params, &grads, &mask, lr);
        self.iteration += 1;
        if let (Some(every), Some(dir)) = (self.config.checkpoint_every, &self.config.checkpoint_dir) {
            if self.iteration % every == 0 {
                checkpoint::save(&self.to_checkpoint(), &dir.join(format!("ckpt-{}.dgn", self.iteration)))?;
            }
        }
        Ok(IterationMetrics {
            iteration: self.iteration,
            mse: stats.mse,
            log_joint_mean: stats.log_joint_mean,
            wall_ms: if self.config.record_wall_time {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        })
    }

    fn write_diagnostic(&self) {
        if let Some(dir) = &self.config.checkpoint_dir {
            let path = dir.join(format!("diagnostic-{}.dgn", self.iteration));
            // best effort: the numeric error is what gets reported
            let _ = checkpoint::save(&self.to_checkpoint(), &path);
        }
    }

    /// Runs until `config.iterations` iterations have completed in total.
    pub fn run(&mut self, data: &Dataset) -> Result<Vec<IterationMetrics>> {
        let mut log = Vec::new();
        while self.iteration < self.config.iterations {
            log.push(self.step(data)?);
        }
        Ok(log)
    }
}

/// Indices of the batch used at `iteration`: the whole set when it fits,
/// otherwise consecutive windows of a per-epoch shuffle.
pub(crate) fn batch_window(n: usize, batch: usize, iteration: usize, seed: u64) -> Vec<usize> {
    if batch >= n {
        return (0..n).collect();
    }
    let per_epoch = n.div_ceil(batch);
    let (epoch, k) = (iteration / per_epoch, iteration % per_epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeding::rng(seed, Stream::Shuffle, epoch as u64, 0));
    order[k * batch..((k + 1) * batch).min(n)].to_vec()
}

pub struct TrainOutcome {
    pub model: DeformableGenerator,
    /// Empty in VAE mode.
    pub chains: ChainStore,
    /// Present in VAE mode.
    pub encoder: Option<Network>,
    pub metrics: Vec<IterationMetrics>,
}

/// Trains `model` on `data` for `config.iterations` iterations, by
/// alternating back-propagation or, in VAE mode, jointly with a fresh
/// encoder.
pub fn train(data: &Dataset, model: DeformableGenerator, config: TrainConfig) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::Argument("cannot train on an empty dataset".into()));
    }
    match config.mode {
        Mode::Abp => {
            let mut trainer = Trainer::new(model, config)?;
            let metrics = trainer.run(data)?;
            Ok(TrainOutcome {
                model: trainer.model,
                chains: trainer.chains,
                encoder: None,
                metrics,
            })
        }
        Mode::Vae => {
            let mut rng = seeding::rng(config.seed, Stream::Init, 1, 0);
            let vae = Vae::new(model, false, &mut rng)?;
            let mut trainer = VaeTrainer::new(vae, config)?;
            let metrics = trainer.run(data)?;
            Ok(TrainOutcome {
                model: trainer.vae.model,
                chains: ChainStore::new(),
                encoder: Some(trainer.vae.encoder),
                metrics,
            })
        }
    }
}
