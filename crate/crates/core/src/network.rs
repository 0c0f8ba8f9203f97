//! Sequential layer stacks with cached forward passes and reverse-mode
//! backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{self, Activation};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    FullyConnected,
    Deconv,
    Conv,
}

/// Geometry of one layer. Every layer is a linear map plus bias followed
/// by its activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub kernel_size: usize,
    pub stride: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn fully_connected(in_shape: &[usize], out_shape: &[usize], activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::FullyConnected,
            in_shape: in_shape.to_vec(),
            out_shape: out_shape.to_vec(),
            kernel_size: 0,
            stride: 0,
            activation,
        }
    }

    /// Stride-2 transposed convolution from `[h, w, cin]` to `[2h, 2w, cout]`.
    pub fn deconv(in_shape: [usize; 3], cout: usize, kernel_size: usize, activation: Activation) -> Self {
        let [h, w, _] = in_shape;
        LayerSpec {
            kind: LayerKind::Deconv,
            in_shape: in_shape.to_vec(),
            out_shape: vec![2 * h, 2 * w, cout],
            kernel_size,
            stride: 2,
            activation,
        }
    }

    /// Stride-2 convolution from `[h, w, cin]` to `[h/2, w/2, cout]`.
    pub fn conv(in_shape: [usize; 3], cout: usize, kernel_size: usize, activation: Activation) -> Self {
        let [h, w, _] = in_shape;
        LayerSpec {
            kind: LayerKind::Conv,
            in_shape: in_shape.to_vec(),
            out_shape: vec![h / 2, w / 2, cout],
            kernel_size,
            stride: 2,
            activation,
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::FullyConnected => vec![
                self.in_shape.iter().product(),
                self.out_shape.iter().product(),
            ],
            LayerKind::Deconv | LayerKind::Conv => vec![
                self.kernel_size,
                self.kernel_size,
                self.in_shape[2],
                self.out_shape[2],
            ],
        }
    }

    pub fn bias_len(&self) -> usize {
        match self.kind {
            LayerKind::FullyConnected => self.out_shape.iter().product(),
            LayerKind::Deconv | LayerKind::Conv => self.out_shape[2],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            LayerKind::FullyConnected => true,
            LayerKind::Deconv => {
                self.in_shape.len() == 3
                    && self.out_shape.len() == 3
                    && self.out_shape[0] == self.stride * self.in_shape[0]
                    && self.out_shape[1] == self.stride * self.in_shape[1]
            }
            LayerKind::Conv => {
                self.in_shape.len() == 3
                    && self.out_shape.len() == 3
                    && self.in_shape[0] == self.stride * self.out_shape[0]
                    && self.in_shape[1] == self.stride * self.out_shape[1]
            }
        };
        if !ok || self.in_shape.iter().chain(&self.out_shape).any(|&d| d == 0) {
            return Err(Error::dim("layer spec", &self.in_shape, &self.out_shape));
        }
        if self.kind != LayerKind::FullyConnected && self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        Ok(())
    }
}

/// Values kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    inputs: Vec<Tensor>,
    pre_activations: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    specs: Vec<LayerSpec>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

impl Network {
    /// Gaussian weights with the given standard deviation, zero biases.
    pub fn init<R: Rng + ?Sized>(specs: Vec<LayerSpec>, weight_std: f64, rng: &mut R) -> Result<Self> {
        Self::check_chain(&specs)?;
        let weights = specs
            .iter()
            .map(|s| Tensor::randn(&s.weight_shape(), weight_std, rng))
            .collect();
        let biases = specs.iter().map(|s| Tensor::zeros(&[s.bias_len()])).collect();
        Ok(Network {
            specs,
            weights,
            biases,
        })
    }

    pub fn from_parts(specs: Vec<LayerSpec>, weights: Vec<Tensor>, biases: Vec<Tensor>) -> Result<Self> {
        Self::check_chain(&specs)?;
        if weights.len() != specs.len() || biases.len() != specs.len() {
            return Err(Error::Config("parameter count does not match layer count".into()));
        }
        for ((s, w), b) in specs.iter().zip(&weights).zip(&biases) {
            if w.shape() != s.weight_shape() {
                return Err(Error::dim("layer weight", w.shape(), &s.weight_shape()));
            }
            if b.len() != s.bias_len() {
                return Err(Error::dim("layer bias", b.shape(), &[s.bias_len()]));
            }
        }
        Ok(Network {
            specs,
            weights,
            biases,
        })
    }

    fn check_chain(specs: &[LayerSpec]) -> Result<()> {
        if specs.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for s in specs {
            s.validate()?;
        }
        for pair in specs.windows(2) {
            if pair[0].out_shape != pair[1].in_shape {
                return Err(Error::dim("layer chain", &pair[0].out_shape, &pair[1].in_shape));
            }
        }
        Ok(())
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_len(&self) -> usize {
        self.specs[0].in_shape.iter().product()
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.specs.last().unwrap().out_shape
    }

    /// Parameters in a fixed order: `weight0, bias0, weight1, bias1, ...`.
    pub fn params(&self) -> Vec<&Tensor> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        (0..self.specs.len())
            .flat_map(|i| [format!("{prefix}.{i}.weight"), format!("{prefix}.{i}.bias")])
            .collect()
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params().into_iter().map(Tensor::zeros_like).collect()
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Trace)> {
        if input.len() != self.input_len() {
            return Err(Error::dim("network input", input.shape(), &self.specs[0].in_shape));
        }
        let mut x = input.clone().reshape(&self.specs[0].in_shape)?;
        let mut inputs = Vec::with_capacity(self.specs.len());
        let mut pre = Vec::with_capacity(self.specs.len());
        for ((spec, w), b) in self.specs.iter().zip(&self.weights).zip(&self.biases) {
            let z = match spec.kind {
                LayerKind::FullyConnected => ops::fc_apply(&x, w, b)?.reshape(&spec.out_shape)?,
                LayerKind::Deconv => {
                    let mut z = ops::deconv_apply(&x, w, spec.stride)?;
                    ops::add_channel_bias(&mut z, b)?;
                    z
                }
                LayerKind::Conv => {
                    let mut z = ops::conv_apply(&x, w, spec.stride)?;
                    ops::add_channel_bias(&mut z, b)?;
                    z
                }
            };
            let y = ops::activation_apply(&z, spec.activation);
            inputs.push(x);
            pre.push(z);
            x = y;
        }
        Ok((
            x,
            Trace {
                inputs,
                pre_activations: pre,
            },
        ))
    }

    /// Back-propagates `grad_out` through the traced pass. Returns the
    /// input gradient and, when requested, parameter gradients in
    /// [`Network::params`] order.
    pub fn backward(
        &self,
        trace: &Trace,
        grad_out: &Tensor,
        want_param_grads: bool,
    ) -> Result<(Tensor, Option<Vec<Tensor>>)> {
        let n = self.specs.len();
        let mut g = grad_out.clone().reshape(self.output_shape())?;
        let mut wgrads: Vec<Option<Tensor>> = vec![None; n];
        let mut bgrads: Vec<Option<Tensor>> = vec![None; n];
        for l in (0..n).rev() {
            let spec = &self.specs[l];
            let x = &trace.inputs[l];
            let gz = ops::activation_backward(&trace.pre_activations[l], spec.activation, &g);
            let gx = match spec.kind {
                LayerKind::FullyConnected => {
                    let (gx, pg) = ops::fc_backward(x, &self.weights[l], &gz, want_param_grads)?;
                    if let Some((gw, gb)) = pg {
                        wgrads[l] = Some(gw);
                        bgrads[l] = Some(gb);
                    }
                    gx
                }
                LayerKind::Deconv | LayerKind::Conv => {
                    let (gx, gw) = if spec.kind == LayerKind::Deconv {
                        ops::deconv_backward(x, &self.weights[l], spec.stride, &gz, want_param_grads)?
                    } else {
                        ops::conv_backward(x, &self.weights[l], spec.stride, &gz, want_param_grads)?
                    };
                    wgrads[l] = gw;
                    if want_param_grads {
                        bgrads[l] = Some(ops::channel_bias_grad(&gz));
                    }
                    gx
                }
            };
            g = gx;
        }
        let params = want_param_grads.then(|| {
            wgrads
                .into_iter()
                .zip(bgrads)
                .flat_map(|(w, b)| [w.unwrap(), b.unwrap()])
                .collect()
        });
        Ok((g, params))
    }
}
