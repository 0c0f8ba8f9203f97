//! Warps a rendered shape by a few displacement fields and writes the
//! results side by side.

mod common;

use deformgen::data::emit_grid;
use deformgen::data::synth::{render, Factors, ShapeKind};
use deformgen::warp::warp;
use deformgen::Tensor;

fn field(size: usize, f: impl Fn(f64, f64) -> (f64, f64)) -> Tensor {
    let mut data = Vec::with_capacity(size * size * 2);
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = f(x as f64, y as f64);
            data.extend([dx, dy]);
        }
    }
    Tensor::new(&[size, size, 2], data).unwrap()
}

fn main() {
    let size = 32;
    let image = render(size, ShapeKind::Rectangle, &Factors::canonical(200.0));
    let c = (size as f64 - 1.0) / 2.0;
    let fields = [
        ("identity", field(size, |_, _| (0.0, 0.0))),
        ("shift left 5", field(size, |_, _| (5.0, 0.0))),
        ("half-pixel shift", field(size, |_, _| (0.5, 0.5))),
        ("zoom in", field(size, |x, y| (-(x - c) * 0.3, -(y - c) * 0.3))),
        ("shear", field(size, |_, y| ((y - c) * 0.4, 0.0))),
        ("swirl", field(size, |x, y| {
            let (u, v) = (x - c, y - c);
            let a = 0.6 * (-(u * u + v * v) / 150.0).exp();
            (u * a.cos() - v * a.sin() - u, u * a.sin() + v * a.cos() - v)
        })),
    ];
    let mut tiles = Vec::new();
    for (name, f) in &fields {
        let out = warp(&image, f).unwrap();
        let kept: f64 = out.data().iter().sum::<f64>() / image.data().iter().sum::<f64>();
        println!("{name:<18} mass kept {kept:.3}");
        tiles.push(out);
    }
    let path = common::out_dir("warp_basics").join("warps.png");
    emit_grid(&tiles, tiles.len(), &path).unwrap();
    println!("wrote {}", path.display());
}
