//! The deformable generator: an appearance generator producing an image,
//! a geometric generator producing a displacement field, and the warp that
//! joins them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{LayerSpec, Network, Trace};
use crate::ops::Activation;
use crate::tensor::Tensor;
use crate::warp;

/// Standard deviation of the Gaussian weight initialisation.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub image_size: usize,
    pub d_a: usize,
    pub d_g: usize,
    /// Spatial extent of the fully-connected layer's output map.
    pub base_size: usize,
    /// Channels of the fully-connected output and of every hidden deconv
    /// output in the geometric generator.
    pub geometric_widths: Vec<usize>,
    /// One odd kernel size per deconv layer.
    pub kernel_sizes: Vec<usize>,
    /// Appearance-to-geometric filter-count ratio.
    pub alpha: f64,
}

impl ArchitectureConfig {
    /// 64x64 images with 64-d latents; the full-size default.
    pub fn full() -> Self {
        ArchitectureConfig {
            image_size: 64,
            d_a: 64,
            d_g: 64,
            base_size: 4,
            geometric_widths: vec![128, 64, 32, 16],
            kernel_sizes: vec![3, 3, 5, 5],
            alpha: 0.625,
        }
    }

    /// 8x8 images for gradient checks.
    pub fn tiny8() -> Self {
        ArchitectureConfig {
            image_size: 8,
            d_a: 3,
            d_g: 3,
            base_size: 2,
            geometric_widths: vec![6, 4],
            kernel_sizes: vec![3, 3],
            alpha: 0.625,
        }
    }

    /// 16x16 images.
    pub fn tiny16() -> Self {
        ArchitectureConfig {
            image_size: 16,
            d_a: 4,
            d_g: 4,
            base_size: 4,
            geometric_widths: vec![16, 8],
            kernel_sizes: vec![3, 3],
            alpha: 0.625,
        }
    }

    /// 32x32 images; the training preset used by the synthetic experiments.
    pub fn tiny32() -> Self {
        ArchitectureConfig {
            image_size: 32,
            d_a: 4,
            d_g: 4,
            base_size: 4,
            geometric_widths: vec![32, 16, 8],
            kernel_sizes: vec![3, 3, 5],
            alpha: 0.625,
        }
    }

    pub fn appearance_widths(&self) -> Result<Vec<usize>> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        self.geometric_widths
            .iter()
            .map(|&w| {
                let a = (self.alpha * w as f64).round() as usize;
                if a == 0 {
                    Err(Error::Config(format!(
                        "alpha {} gives zero appearance filters for geometric width {w}",
                        self.alpha
                    )))
                } else {
                    Ok(a)
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.geometric_widths.len();
        if n == 0 || self.kernel_sizes.len() != n {
            return Err(Error::Config(
                "need one kernel size per deconv layer and at least one layer".into(),
            ));
        }
        if self.base_size << n != self.image_size {
            return Err(Error::Config(format!(
                "base size {} doubled {n} times is not image size {}",
                self.base_size, self.image_size
            )));
        }
        if self.d_a == 0 || self.d_g == 0 {
            return Err(Error::Config("latent dimensions must be positive".into()));
        }
        self.appearance_widths().map(|_| ())
    }
}

fn generator_stack(
    latent: usize,
    base: usize,
    widths: &[usize],
    kernels: &[usize],
    out_channels: usize,
    out_activation: Activation,
) -> Vec<LayerSpec> {
    let mut specs = vec![LayerSpec::fully_connected(
        &[latent],
        &[base, base, widths[0]],
        Activation::Relu,
    )];
    let mut size = base;
    for (i, &k) in kernels.iter().enumerate() {
        let last = i + 1 == kernels.len();
        let (cout, act) = if last {
            (out_channels, out_activation)
        } else {
            (widths[i + 1], Activation::Relu)
        };
        specs.push(LayerSpec::deconv([size, size, widths[i]], cout, k, act));
        size *= 2;
    }
    specs
}

/// Layer stacks for the appearance and geometric generators.
pub fn scale_architecture(config: &ArchitectureConfig) -> Result<(Vec<LayerSpec>, Vec<LayerSpec>)> {
    config.validate()?;
    let app_widths = config.appearance_widths()?;
    let appearance = generator_stack(
        config.d_a,
        config.base_size,
        &app_widths,
        &config.kernel_sizes,
        3,
        Activation::Tanh,
    );
    let geometric = generator_stack(
        config.d_g,
        config.base_size,
        &config.geometric_widths,
        &config.kernel_sizes,
        2,
        Activation::Linear,
    );
    Ok((appearance, geometric))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentPair {
    pub za: Vec<f64>,
    pub zg: Vec<f64>,
}

impl LatentPair {
    pub fn zeros(d_a: usize, d_g: usize) -> Self {
        LatentPair {
            za: vec![0.0; d_a],
            zg: vec![0.0; d_g],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.za.iter().chain(&self.zg).all(|v| v.is_finite())
    }
}

/// How the geometric generator enters the model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarpMode {
    #[default]
    Deformable,
    /// Displacement forced to zero; the model reduces to the appearance generator.
    ZeroDisplacement,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeformableGenerator {
    pub arch: ArchitectureConfig,
    pub appearance: Network,
    pub geometry: Network,
    /// Observation noise standard deviation.
    pub sigma: f64,
    /// Scale applied to the geometric generator's raw output, in pixels.
    pub max_displacement: f64,
    pub warp_mode: WarpMode,
}

/// Cached forward pass of the appearance generator.
#[derive(Clone, Debug)]
pub struct AppearancePass {
    pub image: Tensor,
    trace: Trace,
}

/// Cached forward pass of the geometric generator.
#[derive(Clone, Debug)]
pub struct GeometricPass {
    pub field: Tensor,
    trace: Option<Trace>,
}

#[derive(Clone, Debug, Default)]
pub struct ModelGrads {
    pub za: Option<Vec<f64>>,
    pub zg: Option<Vec<f64>>,
    pub appearance: Option<Vec<Tensor>>,
    pub geometry: Option<Vec<Tensor>>,
}

/// Which gradients a backward pass should produce.
#[derive(Clone, Copy, Debug, Default)]
pub struct Wants {
    pub za: bool,
    pub zg: bool,
    pub appearance: bool,
    pub geometry: bool,
}

impl Wants {
    pub const PARAMS: Wants = Wants {
        za: false,
        zg: false,
        appearance: true,
        geometry: true,
    };
    pub const ALL: Wants = Wants {
        za: true,
        zg: true,
        appearance: true,
        geometry: true,
    };
}

impl DeformableGenerator {
    pub fn new<R: Rng + ?Sized>(
        arch: ArchitectureConfig,
        sigma: f64,
        max_displacement: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(sigma > 0.0) || !(max_displacement > 0.0) {
            return Err(Error::Config(
                "sigma and max displacement must be positive".into(),
            ));
        }
        let (a_specs, g_specs) = scale_architecture(&arch)?;
        let appearance = Network::init(a_specs, INIT_STD, rng)?;
        let geometry = Network::init(g_specs, INIT_STD, rng)?;
        Ok(DeformableGenerator {
            arch,
            appearance,
            geometry,
            sigma,
            max_displacement,
            warp_mode: WarpMode::Deformable,
        })
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.arch.image_size, self.arch.image_size, 3]
    }

    pub fn d_a(&self) -> usize {
        self.arch.d_a
    }

    pub fn d_g(&self) -> usize {
        self.arch.d_g
    }

    /// Fresh geometric generator weights, leaving everything else untouched.
    pub fn reinit_geometry<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.geometry = Network::init(self.geometry.specs().to_vec(), INIT_STD, rng)?;
        Ok(())
    }

    pub fn appearance_pass(&self, za: &[f64]) -> Result<AppearancePass> {
        if za.len() != self.d_a() {
            return Err(Error::dim("appearance latent", &[za.len()], &[self.d_a()]));
        }
        let (t, trace) = self.appearance.forward(&Tensor::from_vec(za.to_vec()))?;
        // tanh output mapped to [0, 1]
        let image = t.map(|v| 0.5 * (v + 1.0));
        Ok(AppearancePass { image, trace })
    }

    pub fn geometric_pass(&self, zg: &[f64]) -> Result<GeometricPass> {
        if zg.len() != self.d_g() {
            return Err(Error::dim("geometric latent", &[zg.len()], &[self.d_g()]));
        }
        let s = self.arch.image_size;
        if self.warp_mode == WarpMode::ZeroDisplacement {
            return Ok(GeometricPass {
                field: Tensor::zeros(&[s, s, 2]),
                trace: None,
            });
        }
        let (mut field, trace) = self.geometry.forward(&Tensor::from_vec(zg.to_vec()))?;
        field.scale(self.max_displacement);
        Ok(GeometricPass {
            field,
            trace: Some(trace),
        })
    }

    pub fn appearance_forward(&self, za: &[f64]) -> Result<Tensor> {
        Ok(self.appearance_pass(za)?.image)
    }

    pub fn geometric_forward(&self, zg: &[f64]) -> Result<Tensor> {
        Ok(self.geometric_pass(zg)?.field)
    }

    pub fn compose(&self, app: &AppearancePass, geo: &GeometricPass) -> Result<Tensor> {
        let out = warp::warp(&app.image, &geo.field)?;
        if !out.is_finite() {
            return Err(Error::Numeric("model output is not finite".into()));
        }
        Ok(out)
    }

    pub fn model_forward(&self, latents: &LatentPair) -> Result<Tensor> {
        let app = self.appearance_pass(&latents.za)?;
        let geo = self.geometric_pass(&latents.zg)?;
        self.compose(&app, &geo)
    }

    /// Back-propagates `grad_output` (gradient w.r.t. the warped image)
    /// through the warp and both generators.
    pub fn backward(
        &self,
        app: &AppearancePass,
        geo: &GeometricPass,
        grad_output: &Tensor,
        wants: Wants,
    ) -> Result<ModelGrads> {
        let want_src = wants.za || wants.appearance;
        let want_field = (wants.zg || wants.geometry) && geo.trace.is_some();
        let wg = warp::warp_backward(&app.image, &geo.field, grad_output, want_src, want_field)?;
        let mut grads = ModelGrads::default();
        if let Some(mut gimg) = wg.source {
            gimg.scale(0.5);
            let (gz, gp) = self.appearance.backward(&app.trace, &gimg, wants.appearance)?;
            if wants.za {
                grads.za = Some(gz.into_data());
            }
            grads.appearance = gp;
        } else if wants.appearance {
            grads.appearance = Some(self.appearance.zero_grads());
        }
        match (wg.field, &geo.trace) {
            (Some(mut gfield), Some(trace)) => {
                gfield.scale(self.max_displacement);
                let (gz, gp) = self.geometry.backward(trace, &gfield, wants.geometry)?;
                if wants.zg {
                    grads.zg = Some(gz.into_data());
                }
                grads.geometry = gp;
            }
            _ => {
                if wants.zg {
                    grads.zg = Some(vec![0.0; self.d_g()]);
                }
                if wants.geometry {
                    grads.geometry = Some(self.geometry.zero_grads());
                }
            }
        }
        if wants.za && grads.za.is_none() {
            grads.za = Some(vec![0.0; self.d_a()]);
        }
        Ok(grads)
    }

    /// All generator parameters: appearance first, then geometry.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.appearance.params();
        p.extend(self.geometry.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.appearance.params_mut();
        p.extend(self.geometry.params_mut());
        p
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut n = self.appearance.param_names("appearance");
        n.extend(self.geometry.param_names("geometry"));
        n
    }

    pub fn appearance_param_count(&self) -> usize {
        self.appearance.params().len()
    }
}
