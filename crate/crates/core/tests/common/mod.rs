//! Independent oracles shared by the integration tests and the acceptance
//! harness. Nothing here calls into the code paths it checks except through
//! their public entry points.

#![allow(dead_code)]

use deformgen::model::Wants;
use deformgen::ops::{self, Activation};
use deformgen::vae::{self, Vae};
use deformgen::warp::{self, Coords};
use deformgen::{ArchitectureConfig, DeformableGenerator, LatentKind, LatentPair, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn normal<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::new(shape, normal_vec(shape.iter().product(), rng)).unwrap()
}

/// `|a - b| / max(|a|, |b|)`, with the denominator floored at 1e-7 so that
/// two vanishing derivatives compare as equal.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

fn unit_direction<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let v = normal_vec(n, rng);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Worst relative error between `<grad, v>` and the central difference of
/// `f` along `v`, over `directions` random unit vectors `v`.
pub fn directional_check<R: Rng>(
    x: &[f64],
    grad: &[f64],
    directions: usize,
    rng: &mut R,
    f: impl Fn(&[f64]) -> f64,
) -> f64 {
    assert_eq!(x.len(), grad.len());
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let v = unit_direction(x.len(), rng);
        let plus: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + FD_STEP * b).collect();
        let minus: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - FD_STEP * b).collect();
        let numeric = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
        let analytic: f64 = grad.iter().zip(&v).map(|(a, b)| a * b).sum();
        worst = worst.max(rel_err(analytic, numeric));
    }
    worst
}

/// Outcome of one gradient-check family.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: &'static str,
    pub instances: usize,
    pub worst: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.worst <= FD_TOL
    }
}

fn with(t: &Tensor, data: &[f64]) -> Tensor {
    Tensor::new(t.shape(), data.to_vec()).unwrap()
}

fn flatten(ts: &[Tensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn unflatten(template: &[&Tensor], flat: &[f64]) -> Vec<Tensor> {
    let mut off = 0;
    template
        .iter()
        .map(|t| {
            let n = t.len();
            let out = with(t, &flat[off..off + n]);
            off += n;
            out
        })
        .collect()
}

const DIRS: usize = 3;

pub fn check_fc(instances: usize, seed: u64) -> GradReport {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (n_in, n_out) = (r.random_range(1..12), r.random_range(1..10));
        let x = normal(&[n_in], &mut r);
        let w = normal(&[n_in, n_out], &mut r);
        let b = normal(&[n_out], &mut r);
        let up = normal(&[n_out], &mut r);
        let loss = |x: &Tensor, w: &Tensor, b: &Tensor| ops::fc_apply(x, w, b).unwrap().dot(&up);
        let (gx, pg) = ops::fc_backward(&x, &w, &up, true).unwrap();
        let (gw, gb) = pg.unwrap();
        worst = worst
            .max(directional_check(x.data(), gx.data(), DIRS, &mut r, |v| loss(&with(&x, v), &w, &b)))
            .max(directional_check(w.data(), gw.data(), DIRS, &mut r, |v| loss(&x, &with(&w, v), &b)))
            .max(directional_check(b.data(), gb.data(), DIRS, &mut r, |v| loss(&x, &w, &with(&b, v))));
    }
    GradReport { name: "fully connected", instances, worst }
}

fn odd_kernel<R: Rng>(r: &mut R) -> usize {
    [1, 3, 5][r.random_range(0..3)]
}

pub fn check_deconv(instances: usize, seed: u64) -> GradReport {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (h, w) = (r.random_range(1..5), r.random_range(1..5));
        let (cin, cout, k) = (r.random_range(1..4), r.random_range(1..4), odd_kernel(&mut r));
        let x = normal(&[h, w, cin], &mut r);
        let kern = normal(&[k, k, cin, cout], &mut r);
        let up = normal(&[2 * h, 2 * w, cout], &mut r);
        let loss = |x: &Tensor, k: &Tensor| ops::deconv_apply(x, k, 2).unwrap().dot(&up);
        let (gx, gk) = ops::deconv_backward(&x, &kern, 2, &up, true).unwrap();
        let gk = gk.unwrap();
        worst = worst
            .max(directional_check(x.data(), gx.data(), DIRS, &mut r, |v| loss(&with(&x, v), &kern)))
            .max(directional_check(kern.data(), gk.data(), DIRS, &mut r, |v| loss(&x, &with(&kern, v))));
    }
    GradReport { name: "transposed convolution", instances, worst }
}

pub fn check_conv(instances: usize, seed: u64) -> GradReport {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (h, w) = (2 * r.random_range(1..4), 2 * r.random_range(1..4));
        let (cin, cout, k) = (r.random_range(1..4), r.random_range(1..4), odd_kernel(&mut r));
        let x = normal(&[h, w, cin], &mut r);
        let kern = normal(&[k, k, cin, cout], &mut r);
        let up = normal(&[h / 2, w / 2, cout], &mut r);
        let loss = |x: &Tensor, k: &Tensor| ops::conv_apply(x, k, 2).unwrap().dot(&up);
        let (gx, gk) = ops::conv_backward(&x, &kern, 2, &up, true).unwrap();
        let gk = gk.unwrap();
        worst = worst
            .max(directional_check(x.data(), gx.data(), DIRS, &mut r, |v| loss(&with(&x, v), &kern)))
            .max(directional_check(kern.data(), gk.data(), DIRS, &mut r, |v| loss(&x, &with(&kern, v))));
    }
    GradReport { name: "strided convolution", instances, worst }
}

pub fn check_activations(instances: usize, seed: u64) -> GradReport {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let kind = [Activation::Relu, Activation::Tanh, Activation::Linear][i % 3];
        let n = r.random_range(1..20);
        // keep ReLU inputs away from the kink
        let x: Vec<f64> = normal_vec(n, &mut r)
            .into_iter()
            .map(|v: f64| if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v })
            .collect();
        let x = Tensor::from_vec(x);
        let up = normal(&[n], &mut r);
        let g = ops::activation_backward(&x, kind, &up);
        worst = worst.max(directional_check(x.data(), g.data(), DIRS, &mut r, |v| {
            ops::activation_apply(&with(&x, v), kind).dot(&up)
        }));
    }
    GradReport { name: "activations", instances, worst }
}

/// Random displacement field whose sample points stay clear of integer
/// coordinates, where bilinear interpolation has kinks.
pub fn smooth_field<R: Rng>(h: usize, w: usize, scale: f64, r: &mut R) -> Tensor {
    let mut f = normal(&[h, w, 2], r);
    for v in f.data_mut() {
        *v *= scale;
        let frac = *v - v.floor();
        if frac < 1e-3 || frac > 1.0 - 1e-3 {
            *v += 0.01;
        }
    }
    f
}

pub fn check_warp(instances: usize, seed: u64) -> GradReport {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (h, w, c) = (r.random_range(2..7), r.random_range(2..7), r.random_range(1..4));
        let src = normal(&[h, w, c], &mut r);
        let field = smooth_field(h, w, 1.5, &mut r);
        let up = normal(&[h, w, c], &mut r);
        let loss = |s: &Tensor, f: &Tensor| warp::warp(s, f).unwrap().dot(&up);
        let g = warp::warp_backward(&src, &field, &up, true, true).unwrap();
        let (gs, gf) = (g.source.unwrap(), g.field.unwrap());
        worst = worst
            .max(directional_check(src.data(), gs.data(), DIRS, &mut r, |v| loss(&with(&src, v), &field)))
            .max(directional_check(field.data(), gf.data(), DIRS, &mut r, |v| loss(&src, &with(&field, v))));
    }
    GradReport { name: "warp", instances, worst }
}

/// Tiny-8 model with weights large enough that every path carries signal.
pub fn random_model(seed: u64) -> DeformableGenerator {
    let mut r = rng(seed);
    let mut m = DeformableGenerator::new(ArchitectureConfig::tiny8(), 0.5, 1.0, &mut r).unwrap();
    for p in m.params_mut() {
        for v in p.data_mut() {
            *v = 0.4 * r.sample::<f64, _>(StandardNormal);
        }
    }
    m
}

fn random_latents<R: Rng>(m: &DeformableGenerator, r: &mut R) -> LatentPair {
    LatentPair {
        za: normal_vec(m.d_a(), r),
        zg: normal_vec(m.d_g(), r),
    }
}

pub fn check_log_joint(instances: usize, seed: u64) -> GradReport {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let m = random_model(seed.wrapping_mul(1000) + i as u64);
        let z = random_latents(&m, &mut r);
        let x = Tensor::new(&m.image_shape(), (0..m.image_shape().iter().product()).map(|_| r.random::<f64>()).collect()).unwrap();
        for kind in [LatentKind::Appearance, LatentKind::Geometric] {
            let (_, g) = deformgen::inference::log_joint(&x, &z, &m, kind).unwrap();
            let base = match kind {
                LatentKind::Appearance => z.za.clone(),
                LatentKind::Geometric => z.zg.clone(),
            };
            worst = worst.max(directional_check(&base, &g, DIRS, &mut r, |v| {
                let mut zz = z.clone();
                match kind {
                    LatentKind::Appearance => zz.za = v.to_vec(),
                    LatentKind::Geometric => zz.zg = v.to_vec(),
                }
                deformgen::inference::log_joint(&x, &zz, &m, kind).unwrap().0
            }));
        }
    }
    GradReport { name: "log joint (latents)", instances, worst }
}

/// Parameter gradient of `<up, F(z; theta)>` through both generators and
/// the warp.
pub fn check_full_model(instances: usize, seed: u64) -> GradReport {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let m = random_model(seed.wrapping_mul(1000) + i as u64);
        let z = random_latents(&m, &mut r);
        let up = normal(&m.image_shape(), &mut r);
        let app = m.appearance_pass(&z.za).unwrap();
        let geo = m.geometric_pass(&z.zg).unwrap();
        let g = m.backward(&app, &geo, &up, Wants::PARAMS).unwrap();
        let mut grads = g.appearance.unwrap();
        grads.extend(g.geometry.unwrap());
        let theta = flatten(&m.params().into_iter().cloned().collect::<Vec<_>>());
        let template: Vec<Tensor> = m.params().into_iter().cloned().collect();
        worst = worst.max(directional_check(&theta, &flatten(&grads), DIRS, &mut r, |v| {
            let mut mm = m.clone();
            let refs: Vec<&Tensor> = template.iter().collect();
            for (p, q) in mm.params_mut().into_iter().zip(unflatten(&refs, v)) {
                *p = q;
            }
            mm.model_forward(&z).unwrap().dot(&up)
        }));
    }
    GradReport { name: "full model (parameters)", instances, worst }
}

/// Batch gradient with fixed latents against the batch-mean log joint.
pub fn check_mc_gradient(instances: usize, seed: u64) -> GradReport {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let m = random_model(seed.wrapping_mul(1000) + i as u64);
        let n = r.random_range(1..4);
        let images: Vec<Tensor> = (0..n)
            .map(|_| Tensor::new(&m.image_shape(), (0..192).map(|_| r.random::<f64>()).collect()).unwrap())
            .collect();
        let refs: Vec<&Tensor> = images.iter().collect();
        let latents: Vec<LatentPair> = (0..n).map(|_| random_latents(&m, &mut r)).collect();
        let (grads, _) = deformgen::training::mc_gradient(&m, &refs, &latents).unwrap();
        let template: Vec<Tensor> = m.params().into_iter().cloned().collect();
        let inv_var = 1.0 / (m.sigma * m.sigma);
        worst = worst.max(directional_check(&flatten(&template), &flatten(&grads), DIRS, &mut r, |v| {
            let mut mm = m.clone();
            let t: Vec<&Tensor> = template.iter().collect();
            for (p, q) in mm.params_mut().into_iter().zip(unflatten(&t, v)) {
                *p = q;
            }
            images
                .iter()
                .zip(&latents)
                .map(|(x, z)| -0.5 * inv_var * x.sub(&mm.model_forward(z).unwrap()).unwrap().norm_sq())
                .sum::<f64>()
                / n as f64
        }));
    }
    GradReport { name: "batch log-likelihood (parameters)", instances, worst }
}

pub fn check_elbo(instances: usize, seed: u64) -> GradReport {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let m = random_model(seed.wrapping_mul(1000) + i as u64);
        let mut v = Vae::new(m, false, &mut r).unwrap();
        for p in v.encoder.params_mut() {
            for x in p.data_mut() {
                *x *= 5.0;
            }
        }
        let x = Tensor::new(&v.model.image_shape(), (0..192).map(|_| r.random::<f64>()).collect()).unwrap();
        let (ea, eg) = (normal_vec(v.model.d_a(), &mut r), normal_vec(v.model.d_g(), &mut r));
        let (_, grads) = vae::elbo_gradient(&v, &x, &ea, &eg).unwrap();
        let template: Vec<Tensor> = v.params().into_iter().cloned().collect();
        let theta = flatten(&template);
        worst = worst.max(directional_check(&theta, &flatten(&grads), DIRS, &mut r, |t| {
            let mut vv = v.clone();
            let refs: Vec<&Tensor> = template.iter().collect();
            for (p, q) in vv.params_mut().into_iter().zip(unflatten(&refs, t)) {
                *p = q;
            }
            vae::elbo_gradient(&vv, &x, &ea, &eg).unwrap().0
        }));
    }
    GradReport { name: "VAE evidence lower bound", instances, worst }
}

pub fn gradient_suite(instances: usize, seed: u64) -> Vec<GradReport> {
    vec![
        check_fc(instances, seed),
        check_deconv(instances, seed + 1),
        check_conv(instances, seed + 2),
        check_activations(instances, seed + 3),
        check_warp(instances, seed + 4),
        check_log_joint(instances, seed + 5),
        check_full_model(instances, seed + 6),
        check_mc_gradient(instances, seed + 8),
        check_elbo(instances, seed + 7),
    ]
}

/// Bilinear resampling written as the double sum over every source pixel.
pub fn warp_full_sum(source: &Tensor, coords: &Coords) -> Tensor {
    let (h, w, c) = source.hwc().unwrap();
    let k = |t: f64| (1.0 - t.abs()).max(0.0);
    let mut out = Tensor::zeros(&[coords.height, coords.width, c]);
    for p in 0..coords.height * coords.width {
        for j in 0..h {
            for i in 0..w {
                let wt = k(coords.u[p] - i as f64) * k(coords.v[p] - j as f64);
                for ch in 0..c {
                    out.data_mut()[p * c + ch] += wt * source.at3(j, i, ch);
                }
            }
        }
    }
    out
}

/// `out[y][x] = src[y + dy][x + dx]`, zero outside.
pub fn array_shift(src: &Tensor, dx: i64, dy: i64) -> Tensor {
    let (h, w, c) = src.hwc().unwrap();
    let mut out = src.zeros_like();
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let (sy, sx) = (y + dy, x + dx);
            if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                for ch in 0..c {
                    out.data_mut()[((y * w as i64 + x) as usize) * c + ch] = src.at3(sy as usize, sx as usize, ch);
                }
            }
        }
    }
    out
}

pub fn constant_field(h: usize, w: usize, dx: f64, dy: f64) -> Tensor {
    let data = (0..h * w).flat_map(|_| [dx, dy]).collect();
    Tensor::new(&[h, w, 2], data).unwrap()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `|<conv(x, Kᵀ), y> - <x, deconv(y, K)>|` for a random instance.
pub fn adjoint_gap(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (h, w) = (r.random_range(1..6), r.random_range(1..6));
    let (cin, cout, k) = (r.random_range(1..5), r.random_range(1..5), odd_kernel(&mut r));
    let kern = normal(&[k, k, cin, cout], &mut r);
    let y = normal(&[h, w, cin], &mut r);
    let x = normal(&[2 * h, 2 * w, cout], &mut r);
    let lhs = ops::conv_apply(&x, &kern.transpose_channels().unwrap(), 2).unwrap().dot(&y);
    let rhs = x.dot(&ops::deconv_apply(&y, &kern, 2).unwrap());
    (lhs - rhs).abs()
}

/// Linear-Gaussian model `x = W z + e`, `z ~ N(0, I)`, `e ~ N(0, s^2 I)`,
/// with its closed-form posterior.
pub struct LinearGaussian {
    pub w: Vec<Vec<f64>>,
    pub sigma: f64,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&p, &q| m[p][col].abs().total_cmp(&m[q][col].abs())).unwrap();
        m.swap(col, piv);
        let d = m[col][col];
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for row in 0..n {
            if row != col {
                let f = m[row][col];
                let pivot_row = m[col].clone();
                for (v, p) in m[row].iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

impl LinearGaussian {
    pub fn new(w: Vec<Vec<f64>>, sigma: f64, x: Vec<f64>) -> Self {
        let d = w[0].len();
        let s2 = sigma * sigma;
        let prec: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| w.iter().map(|row| row[i] * row[j]).sum::<f64>() / s2 + if i == j { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let cov = invert(&prec);
        let wtx: Vec<f64> = (0..d).map(|i| w.iter().zip(&x).map(|(row, xv)| row[i] * xv).sum::<f64>() / s2).collect();
        let mean = (0..d).map(|i| (0..d).map(|j| cov[i][j] * wtx[j]).sum()).collect();
        LinearGaussian { w, sigma, x, mean, cov }
    }

    /// Gradient of the log joint with respect to `z`.
    pub fn grad(&self, z: &[f64]) -> Vec<f64> {
        let s2 = self.sigma * self.sigma;
        let resid: Vec<f64> = self
            .w
            .iter()
            .zip(&self.x)
            .map(|(row, xv)| xv - row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        (0..z.len())
            .map(|i| self.w.iter().zip(&resid).map(|(row, rv)| row[i] * rv).sum::<f64>() / s2 - z[i])
            .collect()
    }
}

/// Moment comparison of Langevin samples against the exact posterior.
#[derive(Debug)]
pub struct MomentReport {
    pub samples: usize,
    /// Largest `|sample moment - exact| / standard error` over every mean
    /// and variance.
    pub worst_z: f64,
}

/// Runs `chains` independent chains of `burn_in` steps, alternating
/// updates of the first `split` coordinates and the rest, and compares the
/// final states' moments against the closed form.
pub fn langevin_moments(model: &LinearGaussian, split: usize, chains: usize, burn_in: usize, step: f64, seed: u64) -> MomentReport {
    use deformgen::inference::langevin_step;
    let cfg = deformgen::LangevinConfig {
        step_size: step,
        steps: 1,
        noise: true,
        seed,
    };
    let d = model.mean.len();
    let mut r = rng(seed);
    let mut samples = Vec::with_capacity(chains);
    for _ in 0..chains {
        let mut z = vec![0.0; d];
        for _ in 0..burn_in {
            let g = model.grad(&z);
            let a = langevin_step(&z[..split], &g[..split], &cfg, &mut r);
            z[..split].copy_from_slice(&a);
            if split < d {
                let g = model.grad(&z);
                let b = langevin_step(&z[split..], &g[split..], &cfg, &mut r);
                z[split..].copy_from_slice(&b);
            }
        }
        samples.push(z);
    }
    let n = chains as f64;
    let mut worst: f64 = 0.0;
    for i in 0..d {
        let m = samples.iter().map(|s| s[i]).sum::<f64>() / n;
        let var_true = model.cov[i][i];
        let mean_se = (var_true / n).sqrt();
        worst = worst.max((m - model.mean[i]).abs() / mean_se);
        let v = samples.iter().map(|s| (s[i] - model.mean[i]).powi(2)).sum::<f64>() / n;
        let var_se = var_true * (2.0 / n).sqrt();
        worst = worst.max((v - var_true).abs() / var_se);
    }
    MomentReport { samples: chains, worst_z: worst }
}

pub fn linear_gaussian_1d() -> LinearGaussian {
    LinearGaussian::new(vec![vec![2.0]], 1.0, vec![1.5])
}

pub fn linear_gaussian_4d() -> LinearGaussian {
    let w = vec![
        vec![1.0, 0.5, 0.0, -0.3],
        vec![0.2, 1.0, 0.4, 0.0],
        vec![0.0, -0.6, 1.0, 0.5],
        vec![0.3, 0.0, 0.2, 1.0],
        vec![0.5, 0.5, -0.5, 0.5],
    ];
    LinearGaussian::new(w, 0.8, vec![1.0, -0.5, 0.7, 0.2, 0.9])
}

pub mod repro {
    use deformgen::data::checkpoint::{self, Precision};
    use deformgen::data::synth::{synth_generate, SynthSpec};
    use deformgen::data::Dataset;
    use deformgen::seeding::{self, Stream};
    use deformgen::training::{write_metrics, IterationMetrics, TrainConfig, Trainer};
    use deformgen::{ArchitectureConfig, DeformableGenerator, LangevinConfig};

    pub fn dataset() -> Dataset {
        synth_generate(&SynthSpec::varied(12, 8, 4)).unwrap()
    }

    pub fn config(iterations: usize) -> TrainConfig {
        TrainConfig {
            iterations,
            batch_size: 5,
            learning_rate: 1e-3,
            langevin: LangevinConfig {
                steps: 3,
                ..LangevinConfig::default()
            },
            seed: 21,
            ..TrainConfig::default()
        }
    }

    pub fn fresh(iterations: usize) -> Trainer {
        let mut r = seeding::rng(21, Stream::Init, 0, 0);
        let m = DeformableGenerator::new(ArchitectureConfig::tiny8(), 0.3, 2.0, &mut r).unwrap();
        Trainer::new(m, config(iterations)).unwrap()
    }

    pub fn metrics_bytes(m: &[IterationMetrics]) -> Vec<u8> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.csv");
        write_metrics(m, &p).unwrap();
        std::fs::read(p).unwrap()
    }

    /// Two identical fixed-seed runs produce byte-identical logs.
    pub fn rerun_identical(iterations: usize) -> bool {
        let data = dataset();
        let a = fresh(iterations).run(&data).unwrap();
        let b = fresh(iterations).run(&data).unwrap();
        !a.is_empty() && metrics_bytes(&a) == metrics_bytes(&b)
    }

    /// A trained checkpoint written at full precision decodes to the same
    /// state and re-encodes to the same bytes.
    pub fn checkpoint_bitwise(iterations: usize) -> bool {
        let data = dataset();
        let mut t = fresh(iterations);
        t.run(&data).unwrap();
        let ck = t.to_checkpoint();
        let bytes = checkpoint::to_bytes(&ck, Precision::F64).unwrap();
        let back = checkpoint::from_bytes(&bytes).unwrap();
        back == ck && checkpoint::to_bytes(&back, Precision::F64).unwrap() == bytes
    }

    /// Interrupting after `split` iterations and resuming from a saved
    /// checkpoint reproduces the uninterrupted run exactly.
    pub fn resume_matches(split: usize, total: usize) -> bool {
        let data = dataset();
        let mut whole = fresh(total);
        let log_whole = whole.run(&data).unwrap();

        let mut first = fresh(split);
        let mut log = first.run(&data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mid.dgn");
        checkpoint::save_with(&first.to_checkpoint(), &path, Precision::F64).unwrap();
        let mut second = Trainer::from_checkpoint(checkpoint::load(&path).unwrap(), config(total)).unwrap();
        log.extend(second.run(&data).unwrap());

        metrics_bytes(&log) == metrics_bytes(&log_whole)
            && second.model == whole.model
            && second.chains == whole.chains
            && second.optimizer == whole.optimizer
    }
}
