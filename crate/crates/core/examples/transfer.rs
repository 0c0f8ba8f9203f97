//! Freezes a trained geometric generator and fine-tunes the appearance
//! generator on recoloured shapes, against a zero-warp control.

mod common;

use deformgen::analysis::{reconstruction_error, transfer_fine_tune, PixelScale};
use deformgen::data::Dataset;
use deformgen::training::{Optimizer, TrainConfig};
use deformgen::{LangevinConfig, WarpMode};

/// Swaps the red and blue channels and dims the result.
fn recolor(data: &Dataset) -> Dataset {
    let images = data
        .images
        .iter()
        .map(|img| {
            let mut out = img.clone();
            for px in out.data_mut().chunks_exact_mut(3) {
                let (r, g, b) = (px[0], px[1], px[2]);
                px.copy_from_slice(&[0.7 * b, 0.7 * g, 0.7 * r]);
            }
            out
        })
        .collect();
    Dataset::new(images, data.ids.clone(), data.factors.clone()).unwrap()
}

fn main() {
    let source = common::model_from_args();
    let tune = recolor(&common::shapes(50, 2000));
    let test = recolor(&common::shapes(50, 3000));
    let config = TrainConfig {
        iterations: 300,
        batch_size: 25,
        learning_rate: 1e-3,
        optimizer: Optimizer::adam(),
        ..TrainConfig::default()
    };
    let inference = LangevinConfig {
        steps: 300,
        noise: false,
        ..LangevinConfig::default()
    };
    let mut zero = source.clone();
    zero.warp_mode = WarpMode::ZeroDisplacement;
    for (name, model) in [("learned geometry", source), ("zero warp", zero)] {
        let tuned = transfer_fine_tune(model, &tune, config.clone()).unwrap().model;
        let err = reconstruction_error(&tuned, &test, &inference, PixelScale::Byte).unwrap();
        println!("{name:<17} held-out error {:.1} ({})", err.mean, err.convention());
    }
}
