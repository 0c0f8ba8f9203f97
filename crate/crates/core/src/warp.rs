//! Differentiable warping: per-pixel displacement of the sampling grid
//! followed by bilinear resampling of the source image.
//!
//! For an output pixel at column `x`, row `y` the source is read at
//! `(u, v) = (x + dx, y + dy)` with weights `max(0, 1 - |u - i|) * max(0, 1 - |v - j|)`
//! over source columns `i` and rows `j`. Only the (at most four) neighbours
//! with non-zero weight are visited; a coordinate with no neighbour inside
//! the grid reads as zero. Displacement fields are `[h, w, 2]` tensors with
//! `dx` in channel 0 and `dy` in channel 1.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Source coordinates for every output pixel, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Coords {
    pub height: usize,
    pub width: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl Coords {
    /// The regular grid `(u, v) = (x, y)`.
    pub fn identity(height: usize, width: usize) -> Self {
        let mut u = Vec::with_capacity(height * width);
        let mut v = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                u.push(x as f64);
                v.push(y as f64);
            }
        }
        Coords { height, width, u, v }
    }
}

/// `(u, v) = (x + dx, y + dy)`.
pub fn deform_coords(field: &Tensor) -> Result<Coords> {
    let (h, w, c) = field.hwc()?;
    if c != 2 {
        return Err(Error::dim("displacement field", field.shape(), &[h, w, 2]));
    }
    let mut coords = Coords::identity(h, w);
    for (p, d) in field.data().chunks_exact(2).enumerate() {
        coords.u[p] += d[0];
        coords.v[p] += d[1];
    }
    Ok(coords)
}

/// Interpolation support along one axis: up to two `(index, weight, dweight/dcoord)`.
#[inline]
fn axis_taps(coord: f64, extent: usize) -> [(usize, f64, f64); 2] {
    const NONE: (usize, f64, f64) = (0, 0.0, 0.0);
    let base = coord.floor();
    let frac = coord - base;
    let mut taps = [NONE; 2];
    // Derivatives are zero at the kinks (frac == 0 means |u - i| is 0 or 1).
    let slope = if frac > 0.0 { 1.0 } else { 0.0 };
    let lo = base as i64;
    if lo >= 0 && (lo as usize) < extent {
        taps[0] = (lo as usize, 1.0 - frac, -slope);
    }
    let hi = lo + 1;
    if hi >= 0 && (hi as usize) < extent && frac > 0.0 {
        taps[1] = (hi as usize, frac, slope);
    }
    taps
}

/// Bilinear resampling of `source` at arbitrary coordinates. The output has
/// the coordinate grid's extents, which may differ from the source.
pub fn sample_grid(source: &Tensor, coords: &Coords) -> Result<Tensor> {
    let (h, w, c) = source.hwc()?;
    let mut out = Tensor::zeros(&[coords.height, coords.width, c]);
    let src = source.data();
    for (p, px) in out.data_mut().chunks_exact_mut(c).enumerate() {
        let tu = axis_taps(coords.u[p], w);
        let tv = axis_taps(coords.v[p], h);
        for &(j, wv, _) in &tv {
            if wv == 0.0 {
                continue;
            }
            for &(i, wu, _) in &tu {
                if wu == 0.0 {
                    continue;
                }
                let wt = wu * wv;
                let s = &src[(j * w + i) * c..(j * w + i + 1) * c];
                for (o, sv) in px.iter_mut().zip(s) {
                    *o += wt * sv;
                }
            }
        }
    }
    Ok(out)
}

/// Bilinear resampling where the coordinate grid matches the source extents.
pub fn bilinear_sample(source: &Tensor, coords: &Coords) -> Result<Tensor> {
    let (h, w, _) = source.hwc()?;
    if (coords.height, coords.width) != (h, w) {
        return Err(Error::dim(
            "bilinear_sample source vs coords",
            source.shape(),
            &[coords.height, coords.width],
        ));
    }
    sample_grid(source, coords)
}

/// Warps `source` by `field`.
pub fn warp(source: &Tensor, field: &Tensor) -> Result<Tensor> {
    check_field(source, field)?;
    bilinear_sample(source, &deform_coords(field)?)
}

fn check_field(source: &Tensor, field: &Tensor) -> Result<()> {
    let (h, w, _) = source.hwc()?;
    if field.shape() != [h, w, 2] {
        return Err(Error::dim("warp source vs field", source.shape(), field.shape()));
    }
    Ok(())
}

/// Gradients of [`warp`] with respect to the source image and the field.
#[derive(Debug, Clone)]
pub struct WarpGrads {
    pub source: Option<Tensor>,
    pub field: Option<Tensor>,
}

pub fn warp_backward(
    source: &Tensor,
    field: &Tensor,
    upstream: &Tensor,
    want_source: bool,
    want_field: bool,
) -> Result<WarpGrads> {
    check_field(source, field)?;
    source.check_same_shape(upstream, "warp_backward upstream")?;
    let (h, w, c) = source.hwc()?;
    let coords = deform_coords(field)?;
    let src = source.data();
    let mut gsrc = want_source.then(|| source.zeros_like());
    let mut gfield = want_field.then(|| field.zeros_like());
    for (p, g) in upstream.data().chunks_exact(c).enumerate() {
        let tu = axis_taps(coords.u[p], w);
        let tv = axis_taps(coords.v[p], h);
        let (mut du, mut dv) = (0.0, 0.0);
        for &(j, wv, dwv) in &tv {
            for &(i, wu, dwu) in &tu {
                if wu == 0.0 && dwu == 0.0 || wv == 0.0 && dwv == 0.0 {
                    continue;
                }
                let base = (j * w + i) * c;
                let s = &src[base..base + c];
                let gs: f64 = g.iter().zip(s).map(|(a, b)| a * b).sum();
                du += dwu * wv * gs;
                dv += wu * dwv * gs;
                if let Some(gsrc) = gsrc.as_mut() {
                    let wt = wu * wv;
                    for (t, gv) in gsrc.data_mut()[base..base + c].iter_mut().zip(g) {
                        *t += wt * gv;
                    }
                }
            }
        }
        if let Some(gf) = gfield.as_mut() {
            gf.data_mut()[2 * p] = du;
            gf.data_mut()[2 * p + 1] = dv;
        }
    }
    Ok(WarpGrads {
        source: gsrc,
        field: gfield,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Eq.-style full double sum over every source pixel.
    fn full_sum(source: &Tensor, coords: &Coords) -> Tensor {
        let (h, w, c) = source.hwc().unwrap();
        let m = |t: f64| t.max(0.0);
        let mut out = Tensor::zeros(&[coords.height, coords.width, c]);
        for p in 0..coords.height * coords.width {
            for j in 0..h {
                for i in 0..w {
                    let wt = m(1.0 - (coords.u[p] - i as f64).abs())
                        * m(1.0 - (coords.v[p] - j as f64).abs());
                    for ch in 0..c {
                        out.data_mut()[p * c + ch] += source.at3(j, i, ch) * wt;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn zero_field_is_identity_grid() {
        let coords = deform_coords(&Tensor::zeros(&[3, 4, 2])).unwrap();
        assert_eq!(coords, Coords::identity(3, 4));
    }

    #[test]
    fn constant_translation_field() {
        let mut f = Tensor::zeros(&[3, 3, 2]);
        for p in 0..9 {
            f.data_mut()[2 * p] = 1.0;
        }
        let c = deform_coords(&f).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                assert_eq!(c.u[y * 3 + x], x as f64 + 1.0);
                assert_eq!(c.v[y * 3 + x], y as f64);
            }
        }
    }

    #[test]
    fn node_and_half_pixel_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let src = Tensor::randn(&[4, 4, 2], 1.0, &mut rng);
        let mut coords = Coords::identity(4, 4);
        coords.u[5] = 2.0;
        coords.v[5] = 3.0;
        coords.u[6] = 1.5;
        coords.v[6] = 2.0;
        coords.u[7] = -5.0;
        let out = bilinear_sample(&src, &coords).unwrap();
        for ch in 0..2 {
            assert_eq!(out.data()[5 * 2 + ch], src.at3(3, 2, ch));
            let avg = 0.5 * (src.at3(2, 1, ch) + src.at3(2, 2, ch));
            assert!((out.data()[6 * 2 + ch] - avg).abs() < 1e-15);
            assert_eq!(out.data()[7 * 2 + ch], 0.0);
        }
    }

    #[test]
    fn matches_full_double_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let src = Tensor::randn(&[5, 5, 3], 1.0, &mut rng);
            let mut coords = Coords::identity(5, 5);
            for p in 0..25 {
                coords.u[p] = rng.random_range(-1.5..5.5);
                coords.v[p] = rng.random_range(-1.5..5.5);
            }
            let a = bilinear_sample(&src, &coords).unwrap();
            let b = full_sum(&src, &coords);
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_errors() {
        let src = Tensor::zeros(&[4, 4, 3]);
        assert!(bilinear_sample(&src, &Coords::identity(3, 4)).is_err());
        assert!(warp(&src, &Tensor::zeros(&[4, 3, 2])).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let src = Tensor::randn(&[4, 4, 3], 1.0, &mut rng);
        let field = Tensor::randn(&[4, 4, 2], 0.7, &mut rng);
        let g = warp_backward(&src, &field, &src.zeros_like(), true, true).unwrap();
        assert!(g.source.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.field.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flat_image_has_no_field_gradient() {
        let src = Tensor::full(&[5, 5, 3], 0.4);
        let field = Tensor::zeros(&[5, 5, 2]);
        let up = Tensor::full(&[5, 5, 3], 1.0);
        let g = warp_backward(&src, &field, &up, false, true).unwrap();
        assert!(g.field.unwrap().data().iter().all(|&v| v == 0.0));
    }
}
