//! Trains a deformable variational auto-encoder and reports the evidence
//! lower bound as it rises.

mod common;

use deformgen::data::emit_grid;
use deformgen::seeding::{self, Stream};
use deformgen::training::{Optimizer, TrainConfig};
use deformgen::vae::{vae_reconstruction_mse, Vae, VaeTrainer};
use deformgen::DeformableGenerator;

fn main() {
    let data = common::shapes(100, 4);
    let mut rng = seeding::rng(4, Stream::Init, 0, 0);
    let model = DeformableGenerator::new(common::shapes_arch(), 0.3, 3.0, &mut rng).unwrap();
    let vae = Vae::new(model, false, &mut rng).unwrap();
    let config = TrainConfig {
        iterations: 600,
        batch_size: 25,
        learning_rate: 1e-3,
        optimizer: Optimizer::adam(),
        seed: 4,
        ..TrainConfig::default()
    };
    let mut trainer = VaeTrainer::new(vae, config).unwrap();
    while trainer.iteration < 600 {
        let m = trainer.step(&data).unwrap();
        if m.iteration % 100 == 0 {
            println!("iteration {:>4}  elbo {:>9.2}  mse {:.5}", m.iteration, m.log_joint_mean, m.mse);
        }
    }
    let vae = &trainer.vae;
    println!("reconstruction mse {:.5}", vae_reconstruction_mse(vae, &data).unwrap());
    let mut tiles = Vec::new();
    for x in data.images.iter().take(8) {
        tiles.push(x.clone());
        tiles.push(vae.reconstruct(x).unwrap());
    }
    let path = common::out_dir("vae").join("reconstructions.png");
    emit_grid(&tiles, 2, &path).unwrap();
    println!("wrote {}", path.display());
}
