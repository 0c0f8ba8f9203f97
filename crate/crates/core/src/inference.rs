//! Posterior sampling of the latent pair by alternating Langevin dynamics.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AppearancePass, DeformableGenerator, GeometricPass, LatentPair, Wants};
use crate::tensor::Tensor;

/// Number of Langevin rounds used when inferring latents of unseen images.
pub const UNSEEN_IMAGE_STEPS: usize = 300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LangevinConfig {
    pub step_size: f64,
    pub steps: usize,
    pub noise: bool,
    pub seed: u64,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        LangevinConfig {
            step_size: 0.1,
            steps: 10,
            noise: true,
            seed: 0,
        }
    }
}

impl LangevinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || self.steps == 0 {
            return Err(Error::Config(format!(
                "langevin needs step size > 0 and steps >= 1, got {} / {}",
                self.step_size, self.steps
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentKind {
    Appearance,
    Geometric,
}

/// Log joint density restricted to one latent:
/// `-|X - F(Za, Zg)|^2 / (2 sigma^2) - |Z_sel|^2 / 2`, and its gradient
/// with respect to that latent.
pub fn log_joint(
    image: &Tensor,
    latents: &LatentPair,
    model: &DeformableGenerator,
    which: LatentKind,
) -> Result<(f64, Vec<f64>)> {
    let app = model.appearance_pass(&latents.za)?;
    let geo = model.geometric_pass(&latents.zg)?;
    let z = match which {
        LatentKind::Appearance => &latents.za,
        LatentKind::Geometric => &latents.zg,
    };
    latent_gradient(image, model, &app, &geo, z, which)
}

fn latent_gradient(
    image: &Tensor,
    model: &DeformableGenerator,
    app: &AppearancePass,
    geo: &GeometricPass,
    z: &[f64],
    which: LatentKind,
) -> Result<(f64, Vec<f64>)> {
    let out = model.compose(app, geo)?;
    let mut resid = image.sub(&out)?;
    let inv_var = 1.0 / (model.sigma * model.sigma);
    let prior: f64 = z.iter().map(|v| v * v).sum();
    let value = -0.5 * inv_var * resid.norm_sq() - 0.5 * prior;
    resid.scale(inv_var);
    let wants = Wants {
        za: which == LatentKind::Appearance,
        zg: which == LatentKind::Geometric,
        ..Wants::default()
    };
    let g = model.backward(app, geo, &resid, wants)?;
    let mut grad = match which {
        LatentKind::Appearance => g.za,
        LatentKind::Geometric => g.zg,
    }
    .expect("requested latent gradient");
    for (gv, zv) in grad.iter_mut().zip(z) {
        *gv -= zv;
    }
    if !value.is_finite() {
        return Err(Error::Numeric("log joint density is not finite".into()));
    }
    Ok((value, grad))
}

/// `Z + (delta^2 / 2) * grad + delta * eps`, with `eps` standard normal when
/// noise is enabled.
pub fn langevin_step<R: Rng + ?Sized>(
    z: &[f64],
    grad: &[f64],
    config: &LangevinConfig,
    rng: &mut R,
) -> Vec<f64> {
    debug_assert_eq!(z.len(), grad.len());
    let d = config.step_size;
    let drift = 0.5 * d * d;
    z.iter()
        .zip(grad)
        .map(|(&zv, &gv)| {
            let mut next = zv + drift * gv;
            if config.noise {
                next += d * rng.sample::<f64, _>(StandardNormal);
            }
            next
        })
        .collect()
}

/// Runs `config.steps` rounds, each one appearance update with the
/// geometric latent fixed followed by one geometric update with the
/// appearance latent fixed. The RNG is seeded from `config.seed`.
pub fn alternating_inference(
    image: &Tensor,
    start: &LatentPair,
    model: &DeformableGenerator,
    config: &LangevinConfig,
) -> Result<LatentPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    alternating_inference_with_rng(image, start, model, config, &mut rng)
}

pub fn alternating_inference_with_rng<R: Rng + ?Sized>(
    image: &Tensor,
    start: &LatentPair,
    model: &DeformableGenerator,
    config: &LangevinConfig,
    rng: &mut R,
) -> Result<LatentPair> {
    config.validate()?;
    let mut z = start.clone();
    // Each generator pass is reused until its latent changes.
    let mut geo = None;
    let mut app = None;
    for _ in 0..config.steps {
        let a = match app.take() {
            Some(a) => a,
            None => model.appearance_pass(&z.za)?,
        };
        let g = match geo.take() {
            Some(g) => g,
            None => model.geometric_pass(&z.zg)?,
        };
        let (_, grad) = latent_gradient(image, model, &a, &g, &z.za, LatentKind::Appearance)?;
        z.za = langevin_step(&z.za, &grad, config, rng);

        let a = model.appearance_pass(&z.za)?;
        let (_, grad) = latent_gradient(image, model, &a, &g, &z.zg, LatentKind::Geometric)?;
        z.zg = langevin_step(&z.zg, &grad, config, rng);
        app = Some(a);
    }
    if !z.is_finite() {
        return Err(Error::Numeric("langevin chain diverged".into()));
    }
    Ok(z)
}

/// Persistent per-example chain states.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainStore {
    chains: BTreeMap<String, LatentPair>,
}

impl ChainStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// The stored state for `id`, or a fresh standard-normal draw that is
    /// recorded before being returned.
    pub fn chain_warm_start<R: Rng + ?Sized>(
        &mut self,
        id: &str,
        d_a: usize,
        d_g: usize,
        rng: &mut R,
    ) -> LatentPair {
        self.chains
            .entry(id.to_string())
            .or_insert_with(|| LatentPair {
                za: (0..d_a).map(|_| rng.sample(StandardNormal)).collect(),
                zg: (0..d_g).map(|_| rng.sample(StandardNormal)).collect(),
            })
            .clone()
    }

    pub fn get(&self, id: &str) -> Option<&LatentPair> {
        self.chains.get(id)
    }

    pub fn insert(&mut self, id: impl Into<String>, state: LatentPair) {
        self.chains.insert(id.into(), state);
    }

    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &LatentPair)> {
        self.chains.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchitectureConfig;

    fn tiny_model(seed: u64) -> DeformableGenerator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = DeformableGenerator::new(ArchitectureConfig::tiny8(), 0.3, 1.5, &mut rng).unwrap();
        // larger weights so the latents matter
        for p in m.params_mut() {
            let scaled = Tensor::randn(p.shape(), 0.4, &mut rng);
            *p = scaled;
        }
        m
    }

    #[test]
    fn fixed_point_without_gradient_or_noise() {
        let cfg = LangevinConfig {
            noise: false,
            ..Default::default()
        };
        let z = vec![0.3, -1.2, 4.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(langevin_step(&z, &[0.0; 3], &cfg, &mut rng), z);
    }

    #[test]
    fn pure_noise_step_is_reproducible() {
        let cfg = LangevinConfig {
            step_size: 0.25,
            ..Default::default()
        };
        let z = vec![1.0, 2.0];
        let next = langevin_step(&z, &[0.0; 2], &cfg, &mut ChaCha8Rng::seed_from_u64(5));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (n, zv) in next.iter().zip(&z) {
            let eps: f64 = rng.sample(StandardNormal);
            assert!((n - zv - 0.25 * eps).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_residual_log_joint_is_prior() {
        let m = tiny_model(1);
        let z = LatentPair {
            za: vec![0.5, -0.25, 1.0],
            zg: vec![0.0; 3],
        };
        let x = m.model_forward(&z).unwrap();
        let (v, _) = log_joint(&x, &z, &m, LatentKind::Appearance).unwrap();
        assert!((v + 0.5 * (0.25 + 0.0625 + 1.0)).abs() < 1e-12);
        let (v, g) = log_joint(&x, &z, &m, LatentKind::Geometric).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&gv| gv == 0.0));
    }

    #[test]
    fn vanishing_step_leaves_start() {
        let m = tiny_model(2);
        let start = LatentPair {
            za: vec![0.1, 0.2, 0.3],
            zg: vec![-0.1, 0.5, 0.0],
        };
        let x = Tensor::full(&[8, 8, 3], 0.3);
        let cfg = LangevinConfig {
            step_size: 1e-12,
            steps: 20,
            noise: true,
            seed: 3,
        };
        let out = alternating_inference(&x, &start, &m, &cfg).unwrap();
        for (a, b) in out.za.iter().chain(&out.zg).zip(start.za.iter().chain(&start.zg)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn noiseless_inference_ascends_log_joint() {
        let m = tiny_model(4);
        let truth = LatentPair {
            za: vec![0.8, -0.4, 0.2],
            zg: vec![0.3, 0.6, -0.7],
        };
        let x = m.model_forward(&truth).unwrap();
        let joint = |z: &LatentPair| {
            let out = m.model_forward(z).unwrap();
            let r = x.sub(&out).unwrap().norm_sq();
            -r / (2.0 * m.sigma * m.sigma)
                - 0.5 * z.za.iter().chain(&z.zg).map(|v| v * v).sum::<f64>()
        };
        let cfg = LangevinConfig {
            step_size: 0.02,
            steps: 1,
            noise: false,
            seed: 0,
        };
        let mut z = LatentPair::zeros(3, 3);
        let mut prev = joint(&z);
        for _ in 0..30 {
            z = alternating_inference(&x, &z, &m, &cfg).unwrap();
            let cur = joint(&z);
            assert!(cur >= prev - 1e-12, "{cur} < {prev}");
            prev = cur;
        }
    }

    #[test]
    fn inference_is_deterministic_given_seed() {
        let m = tiny_model(5);
        let x = Tensor::full(&[8, 8, 3], 0.6);
        let cfg = LangevinConfig {
            seed: 11,
            ..Default::default()
        };
        let s = LatentPair::zeros(3, 3);
        assert_eq!(
            alternating_inference(&x, &s, &m, &cfg).unwrap(),
            alternating_inference(&x, &s, &m, &cfg).unwrap()
        );
    }

    #[test]
    fn chain_store_persistence() {
        let mut store = ChainStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let first = store.chain_warm_start("a", 3, 2, &mut rng);
        assert!(first.is_finite());
        assert_eq!(store.len(), 1);
        let again = store.chain_warm_start("a", 3, 2, &mut rng);
        assert_eq!(first, again);
        let updated = LatentPair {
            za: vec![9.0; 3],
            zg: vec![8.0; 2],
        };
        store.insert("a", updated.clone());
        assert_eq!(store.chain_warm_start("a", 3, 2, &mut rng), updated);
    }

    #[test]
    fn invalid_config_rejected() {
        let m = tiny_model(6);
        let x = Tensor::zeros(&[8, 8, 3]);
        let cfg = LangevinConfig {
            steps: 0,
            ..Default::default()
        };
        assert!(alternating_inference(&x, &LatentPair::zeros(3, 3), &m, &cfg).is_err());
    }
}
