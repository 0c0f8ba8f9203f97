//! Amortised inference: a convolutional encoder maps an image to
//! factorised Gaussian posteriors over both latents, trained jointly with
//! the generator by maximising the evidence lower bound.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::checkpoint::Checkpoint;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::ChainStore;
use crate::model::{ArchitectureConfig, DeformableGenerator, LatentPair, Wants, WarpMode, INIT_STD};
use crate::network::{LayerSpec, Network};
use crate::ops::Activation;
use crate::seeding::{self, Stream};
use crate::tensor::Tensor;
use crate::training::{batch_window, IterationMetrics, Mode, OptimizerState, TrainConfig};

/// Mirror of the geometric generator's deconv stack: stride-2 convs from
/// the image down to the base map, then a linear layer emitting
/// `(mu, log-var)` for `latents` dimensions.
pub fn encoder_specs(arch: &ArchitectureConfig, latents: usize) -> Result<Vec<LayerSpec>> {
    arch.validate()?;
    let n = arch.geometric_widths.len();
    let mut specs = Vec::with_capacity(n + 1);
    let mut size = arch.image_size;
    let mut cin = 3;
    for j in 0..n {
        let cout = arch.geometric_widths[n - 1 - j];
        specs.push(LayerSpec::conv(
            [size, size, cin],
            cout,
            arch.kernel_sizes[n - 1 - j],
            Activation::Relu,
        ));
        size /= 2;
        cin = cout;
    }
    specs.push(LayerSpec::fully_connected(
        &[size, size, cin],
        &[2 * latents],
        Activation::Linear,
    ));
    Ok(specs)
}

/// `KL(N(mu, exp(logvar)) || N(0, I))` summed over dimensions.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

/// `mu + exp(logvar / 2) * eps`.
pub fn reparameterize(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(logvar)
        .zip(eps)
        .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
        .collect()
}

/// Posterior parameters produced by the encoder for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub mu_a: Vec<f64>,
    pub logvar_a: Vec<f64>,
    /// Empty for an appearance-only model.
    pub mu_g: Vec<f64>,
    pub logvar_g: Vec<f64>,
}

impl Posterior {
    fn split(h: &[f64], d_a: usize, d_g: usize) -> Self {
        let (a, g) = h.split_at(2 * d_a);
        Posterior {
            mu_a: a[..d_a].to_vec(),
            logvar_a: a[d_a..].to_vec(),
            mu_g: g[..d_g].to_vec(),
            logvar_g: g[d_g..].to_vec(),
        }
    }

    pub fn kl(&self) -> f64 {
        kl_divergence(&self.mu_a, &self.logvar_a) + kl_divergence(&self.mu_g, &self.logvar_g)
    }
}

/// Generator plus encoder. With `appearance_only` the encoder covers only
/// the appearance latent and the warp is held at zero displacement.
#[derive(Clone, Debug)]
pub struct Vae {
    pub model: DeformableGenerator,
    pub encoder: Network,
    pub appearance_only: bool,
}

impl Vae {
    pub fn new<R: Rng + ?Sized>(mut model: DeformableGenerator, appearance_only: bool, rng: &mut R) -> Result<Self> {
        if appearance_only {
            model.warp_mode = WarpMode::ZeroDisplacement;
        }
        let latents = model.d_a() + if appearance_only { 0 } else { model.d_g() };
        let encoder = Network::init(encoder_specs(&model.arch, latents)?, INIT_STD, rng)?;
        Ok(Vae {
            model,
            encoder,
            appearance_only,
        })
    }

    pub fn from_parts(model: DeformableGenerator, encoder: Network) -> Result<Self> {
        let total = encoder.output_shape().iter().product::<usize>() / 2;
        let appearance_only = if total == model.d_a() + model.d_g() {
            false
        } else if total == model.d_a() {
            true
        } else {
            return Err(Error::dim(
                "encoder output",
                encoder.output_shape(),
                &[2 * (model.d_a() + model.d_g())],
            ));
        };
        if appearance_only && model.warp_mode != WarpMode::ZeroDisplacement {
            return Err(Error::Config("appearance-only encoder needs zero displacement".into()));
        }
        Ok(Vae {
            model,
            encoder,
            appearance_only,
        })
    }

    fn d_g_encoded(&self) -> usize {
        if self.appearance_only {
            0
        } else {
            self.model.d_g()
        }
    }

    pub fn encode(&self, image: &Tensor) -> Result<Posterior> {
        let (h, _) = self.encoder.forward(image)?;
        Ok(Posterior::split(h.data(), self.model.d_a(), self.d_g_encoded()))
    }

    /// Latents at the posterior mean.
    pub fn mean_latents(&self, image: &Tensor) -> Result<LatentPair> {
        let p = self.encode(image)?;
        let zg = if self.appearance_only {
            vec![0.0; self.model.d_g()]
        } else {
            p.mu_g
        };
        Ok(LatentPair { za: p.mu_a, zg })
    }

    /// Decoding of the posterior mean.
    pub fn reconstruct(&self, image: &Tensor) -> Result<Tensor> {
        self.model.model_forward(&self.mean_latents(image)?)
    }

    /// Generator parameters followed by encoder parameters.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.model.params();
        p.extend(self.encoder.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.model.params_mut();
        p.extend(self.encoder.params_mut());
        p
    }
}

/// Per-example ELBO terms and gradients (ascent direction).
struct ExampleElbo {
    grads: Vec<Tensor>,
    sq: f64,
    elbo: f64,
}

fn example_elbo(vae: &Vae, x: &Tensor, eps_a: &[f64], eps_g: &[f64]) -> Result<ExampleElbo> {
    let model = &vae.model;
    let (d_a, d_g) = (model.d_a(), vae.d_g_encoded());
    let (h, trace) = vae.encoder.forward(x)?;
    let post = Posterior::split(h.data(), d_a, d_g);
    let za = reparameterize(&post.mu_a, &post.logvar_a, eps_a);
    let zg = if vae.appearance_only {
        vec![0.0; model.d_g()]
    } else {
        reparameterize(&post.mu_g, &post.logvar_g, eps_g)
    };
    let app = model.appearance_pass(&za)?;
    let geo = model.geometric_pass(&zg)?;
    let out = model.compose(&app, &geo)?;
    let mut resid = x.sub(&out)?;
    let sq = resid.norm_sq();
    let inv_var = 1.0 / (model.sigma * model.sigma);
    let elbo = -0.5 * inv_var * sq - post.kl();
    if !elbo.is_finite() {
        return Err(Error::Numeric("evidence lower bound is not finite".into()));
    }
    resid.scale(inv_var);
    let g = model.backward(&app, &geo, &resid, Wants::ALL)?;
    let gza = g.za.expect("za gradient");
    let gzg = g.zg.expect("zg gradient");
    // d/d(mu) = dz - mu ; d/d(logvar) = dz * eps * exp(lv/2) / 2 - (exp(lv) - 1) / 2
    let mut dh = Vec::with_capacity(h.len());
    let mut block = |gz: &[f64], mu: &[f64], lv: &[f64], eps: &[f64]| {
        dh.extend(gz.iter().zip(mu).map(|(g, m)| g - m));
        dh.extend(
            gz.iter()
                .zip(lv)
                .zip(eps)
                .map(|((g, l), e)| 0.5 * g * e * (0.5 * l).exp() - 0.5 * (l.exp() - 1.0)),
        );
    };
    block(&gza, &post.mu_a, &post.logvar_a, eps_a);
    if !vae.appearance_only {
        block(&gzg, &post.mu_g, &post.logvar_g, eps_g);
    }
    let (_, genc) = vae.encoder.backward(&trace, &Tensor::from_vec(dh), true)?;
    let mut grads = g.appearance.expect("appearance grads");
    grads.extend(g.geometry.expect("geometry grads"));
    grads.extend(genc.expect("encoder grads"));
    Ok(ExampleElbo { grads, sq, elbo })
}

/// ELBO of one example at fixed reparameterization noise, and its gradient
/// (ascent direction) in [`Vae::params`] order.
pub fn elbo_gradient(vae: &Vae, x: &Tensor, eps_a: &[f64], eps_g: &[f64]) -> Result<(f64, Vec<Tensor>)> {
    let e = example_elbo(vae, x, eps_a, eps_g)?;
    Ok((e.elbo, e.grads))
}

fn standard_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Resumable VAE training state.
#[derive(Clone, Debug)]
pub struct VaeTrainer {
    pub vae: Vae,
    pub optimizer: OptimizerState,
    pub config: TrainConfig,
    pub iteration: usize,
}

impl VaeTrainer {
    pub fn new(vae: Vae, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = OptimizerState::new(&vae.params());
        Ok(VaeTrainer {
            vae,
            optimizer,
            config,
            iteration: 0,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let encoder = ckpt
            .encoder
            .ok_or_else(|| Error::Config("checkpoint has no encoder".into()))?;
        let vae = Vae::from_parts(ckpt.model, encoder)?;
        let optimizer = match ckpt.optimizer {
            Some(o) => o,
            None => OptimizerState::new(&vae.params()),
        };
        Ok(VaeTrainer {
            vae,
            optimizer,
            config,
            iteration: ckpt.iteration,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.vae.model.clone(),
            encoder: Some(self.vae.encoder.clone()),
            chains: ChainStore::new(),
            optimizer: Some(self.optimizer.clone()),
            iteration: self.iteration,
            seed: self.config.seed,
            mode: Mode::Vae,
        }
    }

    /// One joint ascent step on generator and encoder. The metrics' third
    /// column holds the batch-mean ELBO.
    pub fn step(&mut self, data: &Dataset) -> Result<IterationMetrics> {
        if data.is_empty() {
            return Err(Error::Argument("cannot train on an empty dataset".into()));
        }
        let started = std::time::Instant::now();
        let t = self.iteration as u64;
        let seed = self.config.seed;
        let idx = batch_window(data.len(), self.config.batch_size, self.iteration, seed);
        let (d_a, d_g) = (self.vae.model.d_a(), self.vae.d_g_encoded());
        let vae = &self.vae;
        let per: Vec<Result<ExampleElbo>> = idx
            .par_iter()
            .map(|&i| {
                let mut rng = seeding::rng(seed, Stream::Reparam, t, i as u64);
                let eps_a = standard_normal(d_a, &mut rng);
                let eps_g = standard_normal(d_g, &mut rng);
                example_elbo(vae, &data.images[i], &eps_a, &eps_g)
            })
            .collect();
        let n = idx.len() as f64;
        let mut total: Option<Vec<Tensor>> = None;
        let (mut sq, mut elbo) = (0.0, 0.0);
        let pixels = data.images[0].len() as f64;
        for r in per {
            let e = r?;
            sq += e.sq / pixels;
            elbo += e.elbo;
            match total.as_mut() {
                None => total = Some(e.grads),
                Some(tot) => tot.iter_mut().zip(&e.grads).for_each(|(a, b)| a.axpy(1.0, b)),
            }
        }
        let mut grads = total.expect("non-empty batch");
        grads.iter_mut().for_each(|g| g.scale(1.0 / n));
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient at iteration {}",
                self.iteration
            )));
        }
        let na = self.vae.model.appearance_param_count();
        let ng = self.vae.model.params().len() - na;
        let freeze_g = self.config.freeze_geometry || self.vae.appearance_only;
        let mask: Vec<bool> = (0..grads.len())
            .map(|k| !(freeze_g && k >= na && k < na + ng))
            .collect();
        let lr = self.config.learning_rate_at(self.iteration);
        let mut params = self.vae.params_mut();
        self.optimizer
            .apply(&self.config.optimizer, &mut params, &grads, &mask, lr);
        self.iteration += 1;
        Ok(IterationMetrics {
            iteration: self.iteration,
            mse: sq / n,
            log_joint_mean: elbo / n,
            wall_ms: if self.config.record_wall_time {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        })
    }

    pub fn run(&mut self, data: &Dataset) -> Result<Vec<IterationMetrics>> {
        let mut log = Vec::new();
        while self.iteration < self.config.iterations {
            log.push(self.step(data)?);
        }
        Ok(log)
    }
}

/// Mean per-pixel squared error of posterior-mean reconstructions.
pub fn vae_reconstruction_mse(vae: &Vae, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Argument("empty dataset".into()));
    }
    let errs: Vec<f64> = data
        .images
        .par_iter()
        .map(|x| {
            let r = vae.reconstruct(x)?;
            Ok(x.sub(&r)?.norm_sq() / x.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}
