//! Dense row-major tensors.
//!
//! Images and feature maps use `[height, width, channels]` layout, so the
//! channel index is the fastest-moving one. Convolution kernels are
//! `[k, k, in_channels, out_channels]`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || n != data.len() {
            return Err(Error::dim("tensor construction", shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero extent in {shape:?}");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Zero-mean Gaussian entries with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(&self.shape)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "subtract")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn check_same_shape(&self, other: &Tensor, context: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(context, &self.shape, &other.shape));
        }
        Ok(())
    }

    /// `[h, w, c]` accessor for image-like tensors.
    #[inline]
    pub fn at3(&self, y: usize, x: usize, c: usize) -> f64 {
        let (w, ch) = (self.shape[1], self.shape[2]);
        self.data[(y * w + x) * ch + c]
    }

    /// Swap the last two axes of a `[k, k, a, b]` kernel, giving `[k, k, b, a]`.
    pub fn transpose_channels(&self) -> Result<Tensor> {
        let &[kh, kw, a, b] = self.shape.as_slice() else {
            return Err(Error::dim("transpose_channels", &self.shape, &[0, 0, 0, 0]));
        };
        let mut out = Tensor::zeros(&[kh, kw, b, a]);
        for s in 0..kh * kw {
            for i in 0..a {
                for j in 0..b {
                    out.data[(s * b + j) * a + i] = self.data[(s * a + i) * b + j];
                }
            }
        }
        Ok(out)
    }

    /// Image extents `(height, width, channels)`.
    pub fn hwc(&self) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::dim("expected [h, w, c] tensor", &self.shape, &[0, 0, 0])),
        }
    }
}
