//! Compares analytic latent gradients of the log joint density with central
//! finite differences on a small random model.

use deformgen::inference::log_joint;
use deformgen::seeding::{self, Stream};
use deformgen::{ArchitectureConfig, DeformableGenerator, LatentKind, LatentPair, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

fn main() {
    let mut rng = seeding::rng(3, Stream::Init, 0, 0);
    let mut model = DeformableGenerator::new(ArchitectureConfig::tiny8(), 0.5, 1.0, &mut rng).unwrap();
    for p in model.params_mut() {
        for v in p.data_mut() {
            *v = 0.4 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let image = Tensor::new(&model.image_shape(), (0..192).map(|_| rng.random()).collect()).unwrap();
    let z = LatentPair {
        za: (0..model.d_a()).map(|_| rng.sample(StandardNormal)).collect(),
        zg: (0..model.d_g()).map(|_| rng.sample(StandardNormal)).collect(),
    };
    let h = 1e-5;
    for kind in [LatentKind::Appearance, LatentKind::Geometric] {
        let (_, grad) = log_joint(&image, &z, &model, kind).unwrap();
        for (i, g) in grad.iter().enumerate() {
            let at = |delta: f64| {
                let mut zz = z.clone();
                match kind {
                    LatentKind::Appearance => zz.za[i] += delta,
                    LatentKind::Geometric => zz.zg[i] += delta,
                }
                log_joint(&image, &zz, &model, kind).unwrap().0
            };
            let numeric = (at(h) - at(-h)) / (2.0 * h);
            let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-12);
            println!("{kind:?}[{i}]  analytic {g:>12.6}  numeric {numeric:>12.6}  relative error {rel:.1e}");
        }
    }
}
