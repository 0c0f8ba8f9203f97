//! Measures how strongly each latent dimension follows horizontal
//! translation on held-out shapes.

mod common;

use deformgen::analysis::{covariance_response, spearman, CovarianceResponse};
use deformgen::{LangevinConfig, LatentKind};

fn main() {
    let model = common::model_from_args();
    let test = common::shapes(100, 1001);
    let config = LangevinConfig {
        steps: 300,
        noise: false,
        ..LangevinConfig::default()
    };
    let r = covariance_response(&model, &test, "tx", &config).unwrap();
    println!("levels {:?}", r.levels);
    for (i, v) in r.rg.iter().enumerate() {
        println!("geometric  dim {i}: response {v:.3}  level means {:?}", rounded(&r.level_curve(LatentKind::Geometric, i)));
    }
    for (i, v) in r.ra.iter().enumerate() {
        println!("appearance dim {i}: response {v:.3}  level means {:?}", rounded(&r.level_curve(LatentKind::Appearance, i)));
    }
    let top = CovarianceResponse::argmax(&r.rg);
    println!("spearman of top geometric dim: {:.2}", spearman(&r.levels, &r.level_curve(LatentKind::Geometric, top)));
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 100.0).round() / 100.0).collect()
}
