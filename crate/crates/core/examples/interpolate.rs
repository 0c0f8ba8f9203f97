//! Sweeps every latent dimension of a model and writes one image row per
//! dimension. Pass a checkpoint path, or a small model is trained first.

mod common;

use deformgen::analysis::{interpolate_dimension, SweepSpec};
use deformgen::data::emit_grid;
use deformgen::LatentKind;

fn main() {
    let model = common::model_from_args();
    let dir = common::out_dir("interpolate");
    for (kind, d, tag) in [
        (LatentKind::Appearance, model.d_a(), "appearance"),
        (LatentKind::Geometric, model.d_g(), "geometry"),
    ] {
        let mut rows = Vec::new();
        for dim in 0..d {
            let spec = SweepSpec {
                gamma: 2.5,
                ..SweepSpec::new(kind, dim)
            };
            rows.extend(interpolate_dimension(&model, &spec).unwrap());
        }
        let path = dir.join(format!("{tag}.png"));
        emit_grid(&rows, 11, &path).unwrap();
        println!("wrote {} ({d} rows)", path.display());
    }
}
