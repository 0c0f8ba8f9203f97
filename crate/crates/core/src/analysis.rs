//! Disentanglement probes for a trained generator: latent sweeps,
//! recombination of latents from different images, covariance responses
//! against labelled factors, reconstruction error of held-out images and
//! appearance-only fine-tuning on a new domain.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::{alternating_inference_with_rng, LangevinConfig, LatentKind, UNSEEN_IMAGE_STEPS};
use crate::model::{DeformableGenerator, LatentPair};
use crate::seeding::{self, Stream};
use crate::tensor::Tensor;
use crate::training::{self, Mode, TrainConfig, TrainOutcome};
use crate::warp;

pub const DEFAULT_GAMMA: f64 = 10.0;
pub const DEFAULT_SWEEP_STEPS: usize = 10;

/// One-dimensional traversal of a latent vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub vector: LatentKind,
    pub dim: usize,
    /// Half-width of the swept range.
    pub gamma: f64,
    /// Number of intervals; the sweep has `steps + 1` samples.
    pub steps: usize,
    /// The other latent, held fixed. `None` means zero.
    pub fixed: Option<Vec<f64>>,
}

impl SweepSpec {
    pub fn new(vector: LatentKind, dim: usize) -> Self {
        SweepSpec {
            vector,
            dim,
            gamma: DEFAULT_GAMMA,
            steps: DEFAULT_SWEEP_STEPS,
            fixed: None,
        }
    }

    /// `-gamma, -gamma + 2 gamma / steps, ..., gamma`.
    pub fn values(&self) -> Vec<f64> {
        (0..=self.steps)
            .map(|k| -self.gamma + 2.0 * self.gamma * k as f64 / self.steps as f64)
            .collect()
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.dim >= d {
            return Err(Error::Argument(format!(
                "sweep dimension {} out of range for a {d}-d latent",
                self.dim
            )));
        }
        if !(self.gamma > 0.0) || self.steps == 0 {
            return Err(Error::Argument("sweep needs gamma > 0 and steps >= 1".into()));
        }
        Ok(())
    }

    /// Latent pairs along the sweep: swept vector zero except at `dim`.
    pub fn latents(&self, d_a: usize, d_g: usize) -> Result<Vec<LatentPair>> {
        let (d_swept, d_fixed) = match self.vector {
            LatentKind::Appearance => (d_a, d_g),
            LatentKind::Geometric => (d_g, d_a),
        };
        self.validate(d_swept)?;
        let fixed = self.fixed.clone().unwrap_or_else(|| vec![0.0; d_fixed]);
        if fixed.len() != d_fixed {
            return Err(Error::dim("fixed latent", &[fixed.len()], &[d_fixed]));
        }
        Ok(self
            .values()
            .into_iter()
            .map(|v| {
                let mut swept = vec![0.0; d_swept];
                swept[self.dim] = v;
                match self.vector {
                    LatentKind::Appearance => LatentPair {
                        za: swept,
                        zg: fixed.clone(),
                    },
                    LatentKind::Geometric => LatentPair {
                        za: fixed.clone(),
                        zg: swept,
                    },
                }
            })
            .collect())
    }
}

/// Images along a one-dimensional latent sweep.
pub fn interpolate_dimension(model: &DeformableGenerator, spec: &SweepSpec) -> Result<Vec<Tensor>> {
    spec.latents(model.d_a(), model.d_g())?
        .iter()
        .map(|z| model.model_forward(z))
        .collect()
}

/// Langevin settings for inferring latents of images the model was not
/// trained on.
pub fn unseen_inference() -> LangevinConfig {
    LangevinConfig {
        steps: UNSEEN_IMAGE_STEPS,
        ..LangevinConfig::default()
    }
}

/// Infers latents for each image from a zero start. Image `i` uses its own
/// RNG stream, so results do not depend on scheduling.
pub fn infer_latents(
    model: &DeformableGenerator,
    images: &[Tensor],
    config: &LangevinConfig,
) -> Result<Vec<LatentPair>> {
    let start = LatentPair::zeros(model.d_a(), model.d_g());
    images
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = seeding::rng(config.seed, Stream::Analysis, 0, i as u64);
            alternating_inference_with_rng(x, &start, model, config, &mut rng)
        })
        .collect()
}

/// Image with the appearance of one example and the geometry of another.
pub fn recombine_latents(model: &DeformableGenerator, za: &[f64], zg: &[f64]) -> Result<Tensor> {
    model.model_forward(&LatentPair {
        za: za.to_vec(),
        zg: zg.to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceResponse {
    /// Distinct factor values, ascending.
    pub levels: Vec<f64>,
    /// `levels` scaled to unit norm.
    pub unit_factor: Vec<f64>,
    /// Per level, the mean geometric latent.
    pub mean_zg: Vec<Vec<f64>>,
    pub mean_za: Vec<Vec<f64>>,
    /// `|mean_zg[., i] . unit_factor|` per geometric dimension.
    pub rg: Vec<f64>,
    pub ra: Vec<f64>,
}

impl CovarianceResponse {
    /// Level means of one latent dimension, in level order.
    pub fn level_curve(&self, kind: LatentKind, dim: usize) -> Vec<f64> {
        let means = match kind {
            LatentKind::Appearance => &self.mean_za,
            LatentKind::Geometric => &self.mean_zg,
        };
        means.iter().map(|m| m[dim]).collect()
    }

    pub fn argmax(values: &[f64]) -> usize {
        values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
            .0
    }
}

/// Absolute dot product of each latent dimension's level means with the
/// unit-normalised vector of factor levels.
pub fn covariance_from_latents(factor: &[f64], latents: &[LatentPair]) -> Result<CovarianceResponse> {
    if factor.len() != latents.len() || latents.is_empty() {
        return Err(Error::Argument("one factor value per latent pair required".into()));
    }
    let mut levels: Vec<f64> = factor.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    if levels.len() < 2 {
        return Err(Error::DegenerateFactor(format!(
            "need at least two factor levels, found {}",
            levels.len()
        )));
    }
    let norm = levels.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::DegenerateFactor("factor vector is zero".into()));
    }
    let unit: Vec<f64> = levels.iter().map(|v| v / norm).collect();
    let level_means = |pick: &dyn Fn(&LatentPair) -> &Vec<f64>| -> Vec<Vec<f64>> {
        levels
            .iter()
            .map(|&lv| {
                let members: Vec<&Vec<f64>> = latents
                    .iter()
                    .zip(factor)
                    .filter(|(_, &f)| f == lv)
                    .map(|(z, _)| pick(z))
                    .collect();
                let mut mean = vec![0.0; members[0].len()];
                for m in &members {
                    for (a, v) in mean.iter_mut().zip(m.iter()) {
                        *a += v;
                    }
                }
                mean.iter_mut().for_each(|a| *a /= members.len() as f64);
                mean
            })
            .collect()
    };
    let mean_zg = level_means(&|z| &z.zg);
    let mean_za = level_means(&|z| &z.za);
    let response = |means: &[Vec<f64>]| -> Vec<f64> {
        (0..means[0].len())
            .map(|i| means.iter().zip(&unit).map(|(m, u)| m[i] * u).sum::<f64>().abs())
            .collect()
    };
    Ok(CovarianceResponse {
        rg: response(&mean_zg),
        ra: response(&mean_za),
        levels,
        unit_factor: unit,
        mean_zg,
        mean_za,
    })
}

/// Infers latents for every example and measures how strongly each latent
/// dimension tracks the named factor.
pub fn covariance_response(
    model: &DeformableGenerator,
    data: &Dataset,
    factor: &str,
    config: &LangevinConfig,
) -> Result<CovarianceResponse> {
    let values = data
        .factors
        .as_ref()
        .and_then(|f| f.column(factor))
        .ok_or_else(|| Error::Argument(format!("dataset has no factor column {factor:?}")))?;
    let latents = infer_latents(model, &data.images, config)?;
    covariance_from_latents(&values, &latents)
}

/// Pixel range in which reconstruction errors are reported.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelScale {
    /// Pixels in `[0, 1]`.
    Unit,
    /// Pixels in `[0, 255]`.
    #[default]
    Byte,
}

impl PixelScale {
    pub fn factor(self) -> f64 {
        match self {
            PixelScale::Unit => 1.0,
            PixelScale::Byte => 255.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    /// Sum over pixels and channels of squared differences, per image.
    pub per_image: Vec<f64>,
    pub mean: f64,
    pub scale: PixelScale,
}

impl ReconstructionReport {
    pub fn convention(&self) -> String {
        let range = match self.scale {
            PixelScale::Unit => "[0,1]",
            PixelScale::Byte => "[0,255]",
        };
        format!("sum of squared differences per image, pixels in {range}")
    }
}

/// Error of reconstructions at given latents.
pub fn reconstruction_error_at(
    model: &DeformableGenerator,
    images: &[Tensor],
    latents: &[LatentPair],
    scale: PixelScale,
) -> Result<ReconstructionReport> {
    if images.is_empty() {
        return Err(Error::Argument("reconstruction error of an empty set".into()));
    }
    if images.len() != latents.len() {
        return Err(Error::Argument("one latent pair per image required".into()));
    }
    let s2 = scale.factor() * scale.factor();
    let per_image: Vec<f64> = images
        .par_iter()
        .zip(latents.par_iter())
        .map(|(x, z)| Ok(x.sub(&model.model_forward(z)?)?.norm_sq() * s2))
        .collect::<Result<_>>()?;
    let mean = per_image.iter().sum::<f64>() / per_image.len() as f64;
    Ok(ReconstructionReport {
        per_image,
        mean,
        scale,
    })
}

/// Infers latents for each image, then measures the reconstruction error.
pub fn reconstruction_error(
    model: &DeformableGenerator,
    data: &Dataset,
    config: &LangevinConfig,
    scale: PixelScale,
) -> Result<ReconstructionReport> {
    if data.is_empty() {
        return Err(Error::Argument("reconstruction error of an empty set".into()));
    }
    let latents = infer_latents(model, &data.images, config)?;
    reconstruction_error_at(model, &data.images, &latents, scale)
}

/// Continues maximum-likelihood training on `data` with the geometric
/// generator frozen.
pub fn transfer_fine_tune(model: DeformableGenerator, data: &Dataset, config: TrainConfig) -> Result<TrainOutcome> {
    let config = TrainConfig {
        freeze_geometry: true,
        mode: Mode::Abp,
        ..config
    };
    training::train(data, model, config)
}

/// Warps an outside image with the displacement fields produced along a
/// geometric sweep. The image must already be at model resolution.
pub fn apply_warp_external(image: &Tensor, model: &DeformableGenerator, spec: &SweepSpec) -> Result<Vec<Tensor>> {
    if spec.vector != LatentKind::Geometric {
        return Err(Error::Argument("external warps sweep the geometric latent".into()));
    }
    let (h, w, _) = image.hwc()?;
    let s = model.arch.image_size;
    if h != s || w != s {
        return Err(Error::ResizeRequired {
            path: "external image".into(),
            actual: h.max(w),
            expected: s,
        });
    }
    spec.latents(model.d_a(), model.d_g())?
        .iter()
        .map(|z| warp::warp(image, &model.geometric_forward(&z.zg)?))
        .collect()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of average ranks).
/// Zero when either input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman inputs differ in length");
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}
