//! Applies the displacement fields of a geometric sweep to an image that
//! the model never generated. Pass a checkpoint and optionally a PNG at
//! model resolution.

mod common;

use deformgen::analysis::{apply_warp_external, SweepSpec};
use deformgen::data::{emit_grid, load_image_raw};
use deformgen::data::synth::{render, Factors, ShapeKind};
use deformgen::LatentKind;

fn main() {
    let model = common::model_from_args();
    let size = model.arch.image_size;
    let image = match std::env::args().nth(2) {
        Some(p) => load_image_raw(p.as_ref()).unwrap(),
        None => render(size, ShapeKind::Rectangle, &Factors { scale: 0.8, ..Factors::canonical(50.0) }),
    };
    let dir = common::out_dir("warp_external");
    for dim in 0..model.d_g() {
        let spec = SweepSpec {
            gamma: 2.5,
            ..SweepSpec::new(LatentKind::Geometric, dim)
        };
        match apply_warp_external(&image, &model, &spec) {
            Ok(frames) => {
                let path = dir.join(format!("dim{dim}.png"));
                emit_grid(&frames, frames.len(), &path).unwrap();
                println!("wrote {}", path.display());
            }
            Err(e) => {
                eprintln!("{e}");
                std::process::exit(2);
            }
        }
    }
}
