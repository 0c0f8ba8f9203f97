//! Layer primitives and their vector-Jacobian products.
//!
//! Convolutions are cross-correlations with symmetric zero padding
//! `(k - 1) / 2`, so a stride-`s` convolution maps an `n`-pixel axis to
//! `n / s` pixels and the transposed convolution maps `n` to `s * n`. With
//! matched geometry, `conv_apply(x, Kᵀ)` is the exact adjoint of
//! `deconv_apply(y, K)`, where `Kᵀ` swaps the two channel axes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

/// `input · weights + bias`, flattened. `input` may have any shape whose
/// element count matches the weight rows.
pub fn fc_apply(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n_in, n_out) = fc_dims(input, weights, bias)?;
    let x = input.data();
    let w = weights.data();
    let mut out = bias.data().to_vec();
    for i in 0..n_in {
        let xi = x[i];
        let row = &w[i * n_out..(i + 1) * n_out];
        for (o, wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
    Ok(Tensor::from_vec(out))
}

/// Gradients of [`fc_apply`]: `(d input, d weights, d bias)`.
pub fn fc_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    want_param_grads: bool,
) -> Result<(Tensor, Option<(Tensor, Tensor)>)> {
    let n_out = weights.shape()[1];
    if grad_out.len() != n_out {
        return Err(Error::dim("fc_backward", weights.shape(), grad_out.shape()));
    }
    let g = grad_out.data();
    let w = weights.data();
    let mut grad_in = input.zeros_like();
    for (i, gi) in grad_in.data_mut().iter_mut().enumerate() {
        let row = &w[i * n_out..(i + 1) * n_out];
        *gi = row.iter().zip(g).map(|(a, b)| a * b).sum();
    }
    let params = want_param_grads.then(|| {
        let mut gw = weights.zeros_like();
        for (i, &xi) in input.data().iter().enumerate() {
            let row = &mut gw.data_mut()[i * n_out..(i + 1) * n_out];
            for (r, gv) in row.iter_mut().zip(g) {
                *r = xi * gv;
            }
        }
        (gw, Tensor::from_vec(g.to_vec()))
    });
    Ok((grad_in, params))
}

fn fc_dims(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let &[n_in, n_out] = weights.shape() else {
        return Err(Error::dim("fc weights must be 2-D", weights.shape(), &[0, 0]));
    };
    if input.len() != n_in {
        return Err(Error::dim("fc input vs weights", input.shape(), weights.shape()));
    }
    if bias.len() != n_out {
        return Err(Error::dim("fc bias vs weights", bias.shape(), weights.shape()));
    }
    Ok((n_in, n_out))
}

struct ConvGeom {
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    cout: usize,
    stride: usize,
    pad: isize,
}

fn conv_geom(input: &Tensor, kernel: &Tensor, stride: usize, context: &'static str) -> Result<ConvGeom> {
    let (h, w, cin) = input.hwc()?;
    let &[k, k2, kin, cout] = kernel.shape() else {
        return Err(Error::dim(context, kernel.shape(), &[0, 0, 0, 0]));
    };
    if k != k2 || k % 2 == 0 {
        return Err(Error::Config(format!(
            "{context}: kernel must be square with odd size, got {k}x{k2}"
        )));
    }
    if kin != cin {
        return Err(Error::dim(context, input.shape(), kernel.shape()));
    }
    if stride == 0 {
        return Err(Error::Config(format!("{context}: stride must be positive")));
    }
    Ok(ConvGeom {
        h,
        w,
        cin,
        k,
        cout,
        stride,
        pad: ((k - 1) / 2) as isize,
    })
}

/// Visits every (input pixel, kernel tap, output pixel) triple of a
/// transposed convolution whose output lands inside the `oh x ow` grid.
/// The same triples, read with input/output swapped, describe the strided
/// convolution from the large grid to the small one.
#[inline]
fn for_each_tap(
    g: &ConvGeom,
    small_h: usize,
    small_w: usize,
    mut f: impl FnMut(usize, usize, usize),
) {
    let (big_h, big_w) = (small_h * g.stride, small_w * g.stride);
    for sy in 0..small_h {
        for sx in 0..small_w {
            let s_idx = sy * small_w + sx;
            for ky in 0..g.k {
                let by = (sy * g.stride + ky) as isize - g.pad;
                if by < 0 || by >= big_h as isize {
                    continue;
                }
                for kx in 0..g.k {
                    let bx = (sx * g.stride + kx) as isize - g.pad;
                    if bx < 0 || bx >= big_w as isize {
                        continue;
                    }
                    f(s_idx, ky * g.k + kx, by as usize * big_w + bx as usize);
                }
            }
        }
    }
}

/// Kernel `[k, k, cin, cout]` reordered to `[cin, k*k*cout]` so a whole
/// input pixel's contribution to every tap is one contiguous row.
fn taps_by_input(kd: &[f64], taps: usize, cin: usize, cout: usize) -> Vec<f64> {
    let j = taps * cout;
    let mut kp = vec![0.0; cin * j];
    for tap in 0..taps {
        for ci in 0..cin {
            let src = &kd[(tap * cin + ci) * cout..(tap * cin + ci + 1) * cout];
            kp[ci * j + tap * cout..ci * j + (tap + 1) * cout].copy_from_slice(src);
        }
    }
    kp
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Transposed (fractionally strided) convolution; output extent is
/// `stride * input` on both spatial axes.
pub fn deconv_apply(input: &Tensor, kernel: &Tensor, stride: usize) -> Result<Tensor> {
    let g = conv_geom(input, kernel, stride, "deconv")?;
    let (cin, cout, taps) = (g.cin, g.cout, g.k * g.k);
    let j = taps * cout;
    let kp = taps_by_input(kernel.data(), taps, cin, cout);
    let x = input.data();
    let n = g.h * g.w;
    let mut cols = vec![0.0; n * j];
    for s in 0..n {
        let row = &mut cols[s * j..(s + 1) * j];
        for ci in 0..cin {
            let a = x[s * cin + ci];
            if a != 0.0 {
                axpy(row, a, &kp[ci * j..(ci + 1) * j]);
            }
        }
    }
    let mut out = Tensor::zeros(&[g.h * stride, g.w * stride, cout]);
    let od = out.data_mut();
    for_each_tap(&g, g.h, g.w, |s, tap, b| {
        let src = &cols[s * j + tap * cout..s * j + (tap + 1) * cout];
        for (o, v) in od[b * cout..(b + 1) * cout].iter_mut().zip(src) {
            *o += v;
        }
    });
    Ok(out)
}

/// Vector-Jacobian product of [`deconv_apply`]: `(d input, d kernel)`.
pub fn deconv_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    grad_out: &Tensor,
    want_kernel_grad: bool,
) -> Result<(Tensor, Option<Tensor>)> {
    let g = conv_geom(input, kernel, stride, "deconv_backward")?;
    let expect = [g.h * stride, g.w * stride, g.cout];
    if grad_out.shape() != expect {
        return Err(Error::dim("deconv_backward upstream", grad_out.shape(), &expect));
    }
    let (cin, cout, taps) = (g.cin, g.cout, g.k * g.k);
    let j = taps * cout;
    let n = g.h * g.w;
    let go = grad_out.data();
    // Upstream gradient gathered per (input pixel, tap); zero where the tap
    // falls outside the output grid.
    let mut cols = vec![0.0; n * j];
    for_each_tap(&g, g.h, g.w, |s, tap, b| {
        cols[s * j + tap * cout..s * j + (tap + 1) * cout]
            .copy_from_slice(&go[b * cout..(b + 1) * cout]);
    });
    let kp = taps_by_input(kernel.data(), taps, cin, cout);
    let mut grad_in = input.zeros_like();
    for (s, gpx) in grad_in.data_mut().chunks_exact_mut(cin).enumerate() {
        let row = &cols[s * j..(s + 1) * j];
        for (ci, gv) in gpx.iter_mut().enumerate() {
            *gv = dot4(row, &kp[ci * j..(ci + 1) * j]);
        }
    }
    let grad_k = want_kernel_grad.then(|| {
        let x = input.data();
        let mut gkp = vec![0.0; cin * j];
        for s in 0..n {
            let row = &cols[s * j..(s + 1) * j];
            for ci in 0..cin {
                let a = x[s * cin + ci];
                if a != 0.0 {
                    axpy(&mut gkp[ci * j..(ci + 1) * j], a, row);
                }
            }
        }
        let mut gk = kernel.zeros_like();
        let gkd = gk.data_mut();
        for tap in 0..taps {
            for ci in 0..cin {
                gkd[(tap * cin + ci) * cout..(tap * cin + ci + 1) * cout]
                    .copy_from_slice(&gkp[ci * j + tap * cout..ci * j + (tap + 1) * cout]);
            }
        }
        gk
    });
    Ok((grad_in, grad_k))
}

/// Strided convolution; output extent is `input / stride` on both axes.
pub fn conv_apply(input: &Tensor, kernel: &Tensor, stride: usize) -> Result<Tensor> {
    let g = conv_geom(input, kernel, stride, "conv")?;
    if g.h % stride != 0 || g.w % stride != 0 {
        return Err(Error::dim("conv input not divisible by stride", input.shape(), &[stride]));
    }
    let (cin, cout) = (g.cin, g.cout);
    let (sh, sw) = (g.h / stride, g.w / stride);
    let mut out = Tensor::zeros(&[sh, sw, cout]);
    let x = input.data();
    let kd = kernel.data();
    let od = out.data_mut();
    for_each_tap(&g, sh, sw, |s, tap, b| {
        let xin = &x[b * cin..(b + 1) * cin];
        let opx = &mut od[s * cout..(s + 1) * cout];
        let kbase = tap * cin * cout;
        for (ci, &a) in xin.iter().enumerate() {
            let krow = &kd[kbase + ci * cout..kbase + (ci + 1) * cout];
            for (o, kv) in opx.iter_mut().zip(krow) {
                *o += a * kv;
            }
        }
    });
    Ok(out)
}

/// Vector-Jacobian product of [`conv_apply`]: `(d input, d kernel)`.
pub fn conv_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    grad_out: &Tensor,
    want_kernel_grad: bool,
) -> Result<(Tensor, Option<Tensor>)> {
    let g = conv_geom(input, kernel, stride, "conv_backward")?;
    let (sh, sw) = (g.h / stride, g.w / stride);
    if grad_out.shape() != [sh, sw, g.cout] {
        return Err(Error::dim("conv_backward upstream", grad_out.shape(), &[sh, sw, g.cout]));
    }
    let (cin, cout) = (g.cin, g.cout);
    let x = input.data();
    let kd = kernel.data();
    let go = grad_out.data();
    let mut grad_in = input.zeros_like();
    {
        let gi = grad_in.data_mut();
        for_each_tap(&g, sh, sw, |s, tap, b| {
            let gpx = &go[s * cout..(s + 1) * cout];
            let kbase = tap * cin * cout;
            for ci in 0..cin {
                let krow = &kd[kbase + ci * cout..kbase + (ci + 1) * cout];
                gi[b * cin + ci] += krow.iter().zip(gpx).map(|(a, b)| a * b).sum::<f64>();
            }
        });
    }
    let grad_k = want_kernel_grad.then(|| {
        let mut gk = kernel.zeros_like();
        let gkd = gk.data_mut();
        for_each_tap(&g, sh, sw, |s, tap, b| {
            let gpx = &go[s * cout..(s + 1) * cout];
            let kbase = tap * cin * cout;
            for ci in 0..cin {
                let a = x[b * cin + ci];
                let krow = &mut gkd[kbase + ci * cout..kbase + (ci + 1) * cout];
                for (kv, gv) in krow.iter_mut().zip(gpx) {
                    *kv += a * gv;
                }
            }
        });
        gk
    });
    Ok((grad_in, grad_k))
}

/// Adds a per-channel bias to a `[.., c]` tensor in place.
pub fn add_channel_bias(t: &mut Tensor, bias: &Tensor) -> Result<()> {
    let c = *t.shape().last().unwrap_or(&0);
    if bias.len() != c {
        return Err(Error::dim("channel bias", t.shape(), bias.shape()));
    }
    let b = bias.data();
    for px in t.data_mut().chunks_exact_mut(c) {
        for (v, bv) in px.iter_mut().zip(b) {
            *v += bv;
        }
    }
    Ok(())
}

pub fn channel_bias_grad(grad_out: &Tensor) -> Tensor {
    let c = *grad_out.shape().last().unwrap();
    let mut g = vec![0.0; c];
    for px in grad_out.data().chunks_exact(c) {
        for (a, v) in g.iter_mut().zip(px) {
            *a += v;
        }
    }
    Tensor::from_vec(g)
}

pub fn activation_apply(input: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Relu => input.map(|v| v.max(0.0)),
        Activation::Tanh => input.map(f64::tanh),
        Activation::Linear => input.clone(),
    }
}

/// Chain rule through an activation, given the pre-activation `input`.
pub fn activation_backward(input: &Tensor, kind: Activation, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    match kind {
        Activation::Relu => {
            for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
                if x <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        Activation::Tanh => {
            for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
                let t = x.tanh();
                *gv *= 1.0 - t * t;
            }
        }
        Activation::Linear => {}
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn fc_identity_and_zero_cases() {
        let v = Tensor::from_vec(vec![1.5, -2.0, 0.25]);
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let out = fc_apply(&v, &eye, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(out.data(), v.data());

        let b = Tensor::from_vec(vec![0.5, -1.0]);
        let w = Tensor::randn(&[3, 2], 1.0, &mut rng(1));
        let out = fc_apply(&Tensor::zeros(&[3]), &w, &b).unwrap();
        assert_eq!(out.data(), b.data());
    }

    #[test]
    fn fc_matches_naive_matmul() {
        let mut r = rng(2);
        let x = Tensor::randn(&[3], 1.0, &mut r);
        let w = Tensor::randn(&[3, 2], 1.0, &mut r);
        let b = Tensor::randn(&[2], 1.0, &mut r);
        let out = fc_apply(&x, &w, &b).unwrap();
        // triple loop with a singleton batch axis
        let mut expect = [[0.0f64; 2]; 1];
        for (row, e) in expect.iter_mut().enumerate() {
            for (j, ej) in e.iter_mut().enumerate() {
                *ej = b.data()[j];
                for k in 0..3 {
                    *ej += x.data()[row * 3 + k] * w.data()[k * 2 + j];
                }
            }
        }
        for j in 0..2 {
            assert!((out.data()[j] - expect[0][j]).abs() < 1e-14);
        }
    }

    #[test]
    fn fc_rejects_mismatched_shapes() {
        let err = fc_apply(&Tensor::zeros(&[4]), &Tensor::zeros(&[3, 2]), &Tensor::zeros(&[2]))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[4]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn deconv_zero_input_and_table_shape() {
        let k = Tensor::randn(&[3, 3, 80, 40], 0.02, &mut rng(3));
        let out = deconv_apply(&Tensor::zeros(&[4, 4, 80]), &k, 2).unwrap();
        assert_eq!(out.shape(), &[8, 8, 40]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deconv_channel_mismatch_is_dimension_error() {
        let k = Tensor::zeros(&[3, 3, 5, 2]);
        assert!(matches!(
            deconv_apply(&Tensor::zeros(&[2, 2, 4]), &k, 2),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            conv_apply(&Tensor::zeros(&[2, 2, 4]), &k, 2),
            Err(Error::Dimension { .. })
        ));
    }

    /// Direct scatter-sum: every input pixel adds `a * K[ky, kx]` at
    /// `stride * pos + k - pad`.
    fn scatter_oracle(input: &Tensor, kernel: &Tensor, stride: usize) -> Tensor {
        let (h, w, cin) = input.hwc().unwrap();
        let k = kernel.shape()[0];
        let cout = kernel.shape()[3];
        let pad = (k as isize - 1) / 2;
        let (oh, ow) = (h * stride, w * stride);
        let mut out = vec![0.0; oh * ow * cout];
        for y in 0..h {
            for x in 0..w {
                for ky in 0..k {
                    for kx in 0..k {
                        let oy = (y * stride + ky) as isize - pad;
                        let ox = (x * stride + kx) as isize - pad;
                        if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                            continue;
                        }
                        for ci in 0..cin {
                            for co in 0..cout {
                                out[(oy as usize * ow + ox as usize) * cout + co] += input.at3(y, x, ci)
                                    * kernel.data()[((ky * k + kx) * cin + ci) * cout + co];
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(&[oh, ow, cout], out).unwrap()
    }

    #[test]
    fn deconv_single_pixel_places_kernel_patch() {
        let kernel = Tensor::new(&[3, 3, 1, 1], (1..=9).map(f64::from).collect()).unwrap();
        let a = 0.7;
        // 1x1 input, stride 1: only the centre tap lands inside the 1x1 output.
        let out = deconv_apply(&Tensor::full(&[1, 1, 1], a), &kernel, 1).unwrap();
        assert_eq!(out, scatter_oracle(&Tensor::full(&[1, 1, 1], a), &kernel, 1));
        assert!((out.data()[0] - a * 5.0).abs() < 1e-15);

        // Centre pixel of a 3x3 input: the full patch a*K appears.
        let mut input = Tensor::zeros(&[3, 3, 1]);
        input.data_mut()[4] = a;
        let out = deconv_apply(&input, &kernel, 1).unwrap();
        for (o, kv) in out.data().iter().zip(kernel.data()) {
            assert!((o - a * kv).abs() < 1e-15);
        }
    }

    #[test]
    fn deconv_matches_scatter_oracle_random() {
        let mut r = rng(4);
        for &(k, stride) in &[(3, 2), (5, 2), (3, 1), (1, 2)] {
            let input = Tensor::randn(&[3, 4, 2], 1.0, &mut r);
            let kernel = Tensor::randn(&[k, k, 2, 3], 1.0, &mut r);
            let out = deconv_apply(&input, &kernel, stride).unwrap();
            let expect = scatter_oracle(&input, &kernel, stride);
            for (a, b) in out.data().iter().zip(expect.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_identity_and_zero_kernel() {
        let x = Tensor::new(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let unit = Tensor::full(&[1, 1, 1, 1], 1.0);
        assert_eq!(conv_apply(&x, &unit, 1).unwrap(), x);
        let zero = Tensor::zeros(&[3, 3, 1, 2]);
        let out = conv_apply(&x, &zero, 1).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_stride_two_halves() {
        let x = Tensor::zeros(&[8, 8, 3]);
        let k = Tensor::zeros(&[5, 5, 3, 4]);
        assert_eq!(conv_apply(&x, &k, 2).unwrap().shape(), &[4, 4, 4]);
        assert!(conv_apply(&Tensor::zeros(&[7, 8, 3]), &k, 2).is_err());
    }

    #[test]
    fn activation_cases() {
        let t = Tensor::from_vec(vec![-1.0, 0.0, 2.0]);
        assert_eq!(activation_apply(&t, Activation::Relu).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(activation_apply(&Tensor::from_vec(vec![0.0]), Activation::Tanh).data(), &[0.0]);
        let g = activation_backward(
            &Tensor::from_vec(vec![0.0]),
            Activation::Tanh,
            &Tensor::from_vec(vec![1.0]),
        );
        let h = 1e-5;
        let fd = ((h as f64).tanh() - (-h as f64).tanh()) / (2.0 * h);
        assert!((g.data()[0] - 1.0).abs() < 1e-15);
        assert!((g.data()[0] - fd).abs() < 1e-9);
    }
}
