//! Infers latents for pairs of shapes and renders every appearance with
//! every geometry.

mod common;

use deformgen::analysis::{infer_latents, recombine_latents};
use deformgen::data::emit_grid;
use deformgen::data::synth::{centroid, mean_hue, render, Factors, ShapeKind};
use deformgen::LangevinConfig;

fn main() {
    let model = common::model_from_args();
    let donors: Vec<_> = [(20.0, -3.0), (140.0, 0.0), (260.0, 1.5), (330.0, 3.0)]
        .iter()
        .map(|&(hue, tx)| render(16, ShapeKind::Ellipse, &Factors { tx, ..Factors::canonical(hue) }))
        .collect();
    let config = LangevinConfig {
        steps: 300,
        noise: false,
        ..LangevinConfig::default()
    };
    let z = infer_latents(&model, &donors, &config).unwrap();
    // row i: appearance of donor i; column j: geometry of donor j
    let mut grid = Vec::new();
    for za in &z {
        for zg in &z {
            let out = recombine_latents(&model, &za.za, &zg.zg).unwrap();
            let c = centroid(&out).unwrap_or((f64::NAN, f64::NAN));
            print!("[hue {:>5.1} x {:>5.2}] ", mean_hue(&out).unwrap_or(f64::NAN), c.0);
            grid.push(out);
        }
        println!();
    }
    let path = common::out_dir("recombine").join("swap.png");
    emit_grid(&grid, donors.len(), &path).unwrap();
    println!("wrote {}", path.display());
}
