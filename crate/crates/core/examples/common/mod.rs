//! Helpers shared by the examples.

#![allow(dead_code)]

use std::path::PathBuf;

use deformgen::data::checkpoint;
use deformgen::data::synth::{synth_generate, SynthSpec};
use deformgen::data::Dataset;
use deformgen::seeding::{self, Stream};
use deformgen::training::{IterationMetrics, Optimizer, TrainConfig, Trainer};
use deformgen::{ArchitectureConfig, DeformableGenerator};

pub const LEVELS: [f64; 5] = [-3.0, -1.5, 0.0, 1.5, 3.0];

/// `$DGN_OUT/<name>`, or `out/examples/<name>`.
pub fn out_dir(name: &str) -> PathBuf {
    let base = std::env::var_os("DGN_OUT").map(PathBuf::from).unwrap_or_else(|| "out/examples".into());
    let dir = base.join(name);
    std::fs::create_dir_all(&dir).expect("create output directory");
    dir
}

/// 16x16 ellipses at five horizontal offsets with random hue.
pub fn shapes(count: usize, seed: u64) -> Dataset {
    synth_generate(&SynthSpec::translation_hue(count, 16, LEVELS.to_vec(), seed)).unwrap()
}

/// Small architecture with one latent per generating factor family.
pub fn shapes_arch() -> ArchitectureConfig {
    ArchitectureConfig {
        d_a: 2,
        d_g: 1,
        geometric_widths: vec![32, 16],
        ..ArchitectureConfig::tiny16()
    }
}

pub fn train_shapes(data: &Dataset, iterations: usize, seed: u64) -> (Trainer, Vec<IterationMetrics>) {
    let mut rng = seeding::rng(seed, Stream::Init, 0, 0);
    let model = DeformableGenerator::new(shapes_arch(), 0.3, 3.0, &mut rng).unwrap();
    let config = TrainConfig {
        iterations,
        batch_size: 25,
        learning_rate: 1e-3,
        optimizer: Optimizer::adam(),
        seed,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(model, config).unwrap();
    let mut log = Vec::with_capacity(iterations);
    while t.iteration < iterations {
        let m = t.step(data).unwrap();
        if m.iteration % 100 == 0 {
            println!("iteration {:>5}  mse {:.5}", m.iteration, m.mse);
        }
        log.push(m);
    }
    (t, log)
}

/// The checkpoint named by the first argument, or a model trained on the
/// spot (iterations from `DGN_ITERS`, default 600).
pub fn model_from_args() -> DeformableGenerator {
    if let Some(path) = std::env::args().nth(1) {
        return checkpoint::load(path.as_ref()).expect("load checkpoint").model;
    }
    let iterations = std::env::var("DGN_ITERS").ok().and_then(|v| v.parse().ok()).unwrap_or(600);
    println!("no checkpoint given; training {iterations} iterations on synthetic shapes");
    train_shapes(&shapes(200, 1), iterations, 1).0.model
}
