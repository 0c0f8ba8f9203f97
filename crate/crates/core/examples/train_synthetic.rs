//! Trains a model on synthetic shapes by alternating back-propagation and
//! writes the checkpoint and metrics log. Iterations come from the first
//! argument (default 1000).

mod common;

use deformgen::data::checkpoint;
use deformgen::training::write_metrics;

fn main() {
    let iterations = std::env::args().nth(1).and_then(|v| v.parse().ok()).unwrap_or(1000);
    let data = common::shapes(200, 1);
    let start = std::time::Instant::now();
    let (trainer, log) = common::train_shapes(&data, iterations, 1);
    println!("trained in {:.0}s", start.elapsed().as_secs_f64());

    let dir = common::out_dir("train_synthetic");
    checkpoint::save(&trainer.to_checkpoint(), &dir.join("model.dgn")).unwrap();
    write_metrics(&log, &dir.join("metrics.csv")).unwrap();
    data.save_dir(&dir.join("data")).unwrap();
    println!("wrote {}", dir.display());
}
