//! Samples the posterior of a one-dimensional linear-Gaussian model with
//! Langevin dynamics and compares the sample moments with the closed form.

use deformgen::inference::langevin_step;
use deformgen::LangevinConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    // x = w z + e, z ~ N(0, 1), e ~ N(0, s^2)
    let (w, s, x) = (2.0, 1.0, 1.5);
    let precision = 1.0 + w * w / (s * s);
    let (mean, var) = (w * x / (s * s) / precision, 1.0 / precision);

    let config = LangevinConfig {
        step_size: 0.05,
        ..LangevinConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let grad = |z: f64| w * (x - w * z) / (s * s) - z;
    let mut z = [0.0];
    let (burn_in, keep, thin) = (2_000, 20_000, 20);
    let mut samples = Vec::with_capacity(keep);
    for t in 0..burn_in + keep * thin {
        z = [langevin_step(&z, &[grad(z[0])], &config, &mut rng)[0]];
        if t >= burn_in && (t - burn_in) % thin == 0 {
            samples.push(z[0]);
        }
    }
    let n = samples.len() as f64;
    let m = samples.iter().sum::<f64>() / n;
    let v = samples.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (n - 1.0);
    println!("posterior mean     exact {mean:.4}  sampled {m:.4}");
    println!("posterior variance exact {var:.4}  sampled {v:.4}");
}
