//! Interrupts training, saves a checkpoint, resumes from it, and checks the
//! result against an uninterrupted run.

mod common;

use deformgen::data::checkpoint::{self, Precision};
use deformgen::seeding::{self, Stream};
use deformgen::training::{Optimizer, TrainConfig, Trainer};
use deformgen::DeformableGenerator;

fn main() {
    let data = common::shapes(40, 5);
    let config = |iterations| TrainConfig {
        iterations,
        batch_size: 10,
        learning_rate: 1e-3,
        optimizer: Optimizer::adam(),
        seed: 5,
        ..TrainConfig::default()
    };
    let fresh = |iterations| {
        let mut rng = seeding::rng(5, Stream::Init, 0, 0);
        let model = DeformableGenerator::new(common::shapes_arch(), 0.3, 3.0, &mut rng).unwrap();
        Trainer::new(model, config(iterations)).unwrap()
    };

    let mut whole = fresh(40);
    whole.run(&data).unwrap();

    let mut first = fresh(15);
    first.run(&data).unwrap();
    let dir = common::out_dir("checkpoint_resume");
    let exact = dir.join("exact.dgn");
    let compact = dir.join("compact.dgn");
    checkpoint::save_with(&first.to_checkpoint(), &exact, Precision::F64).unwrap();
    checkpoint::save(&first.to_checkpoint(), &compact).unwrap();
    for path in [&exact, &compact] {
        let size = std::fs::metadata(path).unwrap().len();
        let mut rest = Trainer::from_checkpoint(checkpoint::load(path).unwrap(), config(40)).unwrap();
        rest.run(&data).unwrap();
        println!(
            "{:<12} {size:>7} bytes  resumed run identical to uninterrupted: {}",
            path.file_name().unwrap().to_string_lossy(),
            rest.model == whole.model
        );
    }
}
