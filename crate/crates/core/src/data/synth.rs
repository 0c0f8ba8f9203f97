//! Procedural images with known generating factors: a single anti-aliased
//! ellipse or rectangle on a black background. Appearance factors are hue
//! and brightness; geometric factors are centre offset, scale and rotation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, FactorTable};
use crate::error::{Error, Result};
use crate::seeding::{self, Stream};
use crate::tensor::Tensor;

/// How one factor is drawn for each image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorSampler {
    Fixed(f64),
    Uniform(f64, f64),
    /// One of the listed values, uniformly.
    Levels(Vec<f64>),
}

impl FactorSampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            FactorSampler::Fixed(v) => *v,
            FactorSampler::Uniform(lo, hi) if lo == hi => *lo,
            FactorSampler::Uniform(lo, hi) => rng.random_range(*lo..*hi),
            FactorSampler::Levels(l) => l[rng.random_range(0..l.len())],
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            FactorSampler::Fixed(v) => v.is_finite(),
            FactorSampler::Uniform(lo, hi) => lo.is_finite() && hi.is_finite() && lo <= hi,
            FactorSampler::Levels(l) => !l.is_empty() && l.iter().all(|v| v.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid range for factor {name}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
}

/// Generating factors of one image. Hue in degrees, rotation in degrees,
/// offsets in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factors {
    pub hue: f64,
    pub brightness: f64,
    pub tx: f64,
    pub ty: f64,
    pub scale: f64,
    pub rotation: f64,
}

impl Factors {
    pub const NAMES: [&'static str; 6] = ["hue", "brightness", "tx", "ty", "scale", "rotation"];

    pub fn canonical(hue: f64) -> Self {
        Factors {
            hue,
            brightness: 1.0,
            tx: 0.0,
            ty: 0.0,
            scale: 1.0,
            rotation: 0.0,
        }
    }

    fn values(&self) -> Vec<f64> {
        vec![self.hue, self.brightness, self.tx, self.ty, self.scale, self.rotation]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub count: usize,
    pub image_size: usize,
    pub shape: ShapeKind,
    pub hue: FactorSampler,
    pub brightness: FactorSampler,
    pub tx: FactorSampler,
    pub ty: FactorSampler,
    pub scale: FactorSampler,
    pub rotation: FactorSampler,
    pub seed: u64,
}

impl SynthSpec {
    /// Every factor varies over a moderate range.
    pub fn varied(count: usize, image_size: usize, seed: u64) -> Self {
        let shift = image_size as f64 / 8.0;
        SynthSpec {
            count,
            image_size,
            shape: ShapeKind::Ellipse,
            hue: FactorSampler::Uniform(0.0, 360.0),
            brightness: FactorSampler::Uniform(0.6, 1.0),
            tx: FactorSampler::Uniform(-shift, shift),
            ty: FactorSampler::Uniform(-shift, shift),
            scale: FactorSampler::Uniform(0.8, 1.2),
            rotation: FactorSampler::Uniform(-30.0, 30.0),
            seed,
        }
    }

    /// Horizontal translation at discrete levels and free hue; all other
    /// factors fixed.
    pub fn translation_hue(count: usize, image_size: usize, levels: Vec<f64>, seed: u64) -> Self {
        SynthSpec {
            count,
            image_size,
            shape: ShapeKind::Ellipse,
            hue: FactorSampler::Uniform(0.0, 360.0),
            brightness: FactorSampler::Fixed(1.0),
            tx: FactorSampler::Levels(levels),
            ty: FactorSampler::Fixed(0.0),
            scale: FactorSampler::Fixed(1.0),
            rotation: FactorSampler::Fixed(0.0),
            seed,
        }
    }
}

/// Supersampling factor per axis for coverage estimation.
const SUPERSAMPLE: usize = 4;

/// Semi-axes of the unscaled shape as fractions of the image size.
const SEMI_MAJOR: f64 = 0.25;
const SEMI_MINOR: f64 = 0.16;

/// Coverage mask in `[0, 1]` of the shape for the given geometry.
pub fn render_mask(size: usize, shape: ShapeKind, f: &Factors) -> Vec<f64> {
    let d = size as f64;
    let (cx, cy) = (0.5 * d + f.tx, 0.5 * d + f.ty);
    let (a, b) = (SEMI_MAJOR * d * f.scale, SEMI_MINOR * d * f.scale);
    let (sin, cos) = f.rotation.to_radians().sin_cos();
    let n = SUPERSAMPLE as f64;
    let mut mask = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut hits = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) / n - cx;
                    let py = y as f64 + (sy as f64 + 0.5) / n - cy;
                    // rotate into the shape frame
                    let qx = cos * px + sin * py;
                    let qy = -sin * px + cos * py;
                    let inside = match shape {
                        ShapeKind::Ellipse => (qx / a).powi(2) + (qy / b).powi(2) <= 1.0,
                        ShapeKind::Rectangle => qx.abs() <= a && qy.abs() <= b,
                    };
                    hits += inside as usize;
                }
            }
            mask[y * size + x] = hits as f64 / (n * n);
        }
    }
    mask
}

/// Fully saturated RGB for a hue in degrees at the given value.
pub fn hue_to_rgb(hue: f64, value: f64) -> [f64; 3] {
    let h = hue.rem_euclid(360.0) / 60.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r * value, g * value, b * value]
}

pub fn render(size: usize, shape: ShapeKind, f: &Factors) -> Tensor {
    let mask = render_mask(size, shape, f);
    let rgb = hue_to_rgb(f.hue, f.brightness);
    let data = mask
        .iter()
        .flat_map(|&m| rgb.map(|c| m * c))
        .collect();
    Tensor::new(&[size, size, 3], data).expect("render shape")
}

pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    if spec.image_size == 0 {
        return Err(Error::Config("image size must be positive".into()));
    }
    for (name, s) in Factors::NAMES.iter().zip([
        &spec.hue,
        &spec.brightness,
        &spec.tx,
        &spec.ty,
        &spec.scale,
        &spec.rotation,
    ]) {
        s.validate(name)?;
    }
    let mut images = Vec::with_capacity(spec.count);
    let mut ids = Vec::with_capacity(spec.count);
    let mut rows = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let mut rng = seeding::rng(spec.seed, Stream::Synth, i as u64, 0);
        let f = Factors {
            hue: spec.hue.sample(&mut rng),
            brightness: spec.brightness.sample(&mut rng),
            tx: spec.tx.sample(&mut rng),
            ty: spec.ty.sample(&mut rng),
            scale: spec.scale.sample(&mut rng),
            rotation: spec.rotation.sample(&mut rng),
        };
        images.push(render(spec.image_size, spec.shape, &f));
        ids.push(format!("synth-{i:05}"));
        rows.push(f.values());
    }
    let factors = FactorTable::new(Factors::NAMES.iter().map(|s| s.to_string()).collect(), rows)?;
    Dataset::new(images, ids, Some(factors))
}

/// Factors of row `i` of a table produced by [`synth_generate`].
pub fn factors_of(table: &FactorTable, i: usize) -> Option<Factors> {
    let get = |name| table.value(i, name);
    Some(Factors {
        hue: get("hue")?,
        brightness: get("brightness")?,
        tx: get("tx")?,
        ty: get("ty")?,
        scale: get("scale")?,
        rotation: get("rotation")?,
    })
}

/// Brightness of a pixel: its largest channel, floored at zero.
fn brightness(px: &[f64]) -> f64 {
    px.iter().cloned().fold(0.0f64, f64::max)
}

/// Centroid `(x, y)` in pixel-index coordinates, each pixel weighted by
/// its squared brightness so a faint background barely contributes.
pub fn centroid(image: &Tensor) -> Option<(f64, f64)> {
    let (h, w, c) = image.hwc().ok()?;
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let b = brightness(&image.data()[(y * w + x) * c..(y * w + x + 1) * c]);
            let wt = b * b;
            sw += wt;
            sx += wt * x as f64;
            sy += wt * y as f64;
        }
    }
    (sw > 0.0).then(|| (sx / sw, sy / sw))
}

/// Hue in degrees of the brightness-weighted sum of pixel colours.
pub fn mean_hue(image: &Tensor) -> Option<f64> {
    let (_, _, c) = image.hwc().ok()?;
    if c != 3 {
        return None;
    }
    let mut s = [0.0; 3];
    for px in image.data().chunks_exact(3) {
        let wt = brightness(px);
        for (a, v) in s.iter_mut().zip(px) {
            *a += wt * v.max(0.0);
        }
    }
    let [r, g, b] = s;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta <= 0.0 {
        return None;
    }
    let h = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    Some(60.0 * h)
}

/// Smallest absolute difference between two angles in degrees.
pub fn hue_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}
