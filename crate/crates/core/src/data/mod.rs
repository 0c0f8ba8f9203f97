//! Datasets, image files, factor tables and checkpoints.

pub mod checkpoint;
pub mod synth;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::warp::{sample_grid, Coords};

/// Ground-truth generating factors, one row per example.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorTable {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FactorTable {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.iter().any(|r| r.len() != names.len()) {
            return Err(Error::Argument("factor row length differs from header".into()));
        }
        Ok(FactorTable { names, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn value(&self, row: usize, name: &str) -> Option<f64> {
        let j = self.names.iter().position(|n| n == name)?;
        self.rows.get(row).map(|r| r[j])
    }

    /// Writes `id,<names...>` rows.
    pub fn write_csv(&self, ids: &[String], path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["id".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in ids.iter().zip(&self.rows) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a table written by [`FactorTable::write_csv`]; returns ids too.
    pub fn read_csv(path: &Path) -> Result<(Vec<String>, FactorTable)> {
        let mut r = csv::Reader::from_path(path)?;
        let names: Vec<String> = r.headers()?.iter().skip(1).map(String::from).collect();
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            ids.push(rec.get(0).unwrap_or_default().to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Argument(format!("bad factor value {s:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok((ids, FactorTable::new(names, rows)?))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub ids: Vec<String>,
    pub factors: Option<FactorTable>,
}

impl Dataset {
    pub fn new(images: Vec<Tensor>, ids: Vec<String>, factors: Option<FactorTable>) -> Result<Self> {
        if images.len() != ids.len() {
            return Err(Error::Argument("one id per image required".into()));
        }
        if let Some(first) = images.first() {
            for img in &images {
                first.check_same_shape(img, "dataset images")?;
            }
        }
        let unique: HashSet<&String> = ids.iter().collect();
        if unique.len() != ids.len() {
            return Err(Error::Argument("dataset ids must be unique".into()));
        }
        if let Some(f) = &factors {
            if f.rows.len() != images.len() {
                return Err(Error::Argument("one factor row per image required".into()));
            }
        }
        Ok(Dataset {
            images,
            ids,
            factors,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Subset by index, keeping ids and factor rows aligned.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            factors: self.factors.as_ref().map(|f| FactorTable {
                names: f.names.clone(),
                rows: indices.iter().map(|&i| f.rows[i].clone()).collect(),
            }),
        }
    }

    /// Writes every image as `<id>.png` plus `factors.csv` when present.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (img, id) in self.images.iter().zip(&self.ids) {
            save_png(img, &dir.join(format!("{id}.png")))?;
        }
        if let Some(f) = &self.factors {
            f.write_csv(&self.ids, &dir.join("factors.csv"))?;
        }
        Ok(())
    }
}

fn is_lossless(path: &Path) -> bool {
    matches!(
        ImageFormat::from_path(path),
        Ok(ImageFormat::Png | ImageFormat::Bmp | ImageFormat::Pnm)
    )
}

/// Decodes every lossless raster image in `dir` (lexicographic order),
/// centre-crops it to a square, resamples to `target` pixels and scales
/// to `[0, 1]`. Ids are file stems.
pub fn load_image_dir(dir: &Path, target: usize) -> Result<Dataset> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && ImageFormat::from_path(p).is_ok())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyDataset(dir.to_path_buf()));
    }
    let mut images = Vec::with_capacity(paths.len());
    let mut ids = Vec::with_capacity(paths.len());
    for p in &paths {
        if !is_lossless(p) {
            return Err(Error::Decode {
                path: p.clone(),
                reason: "only png, bmp and pnm images are accepted".into(),
            });
        }
        images.push(load_image(p, target)?);
        ids.push(
            p.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
    }
    Dataset::new(images, ids, None)
}

/// [`load_image_dir`] plus the `factors.csv` written by
/// [`Dataset::save_dir`], when the directory has one.
pub fn load_dataset(dir: &Path, target: usize) -> Result<Dataset> {
    let mut data = load_image_dir(dir, target)?;
    let table = dir.join("factors.csv");
    if table.exists() {
        let (ids, factors) = FactorTable::read_csv(&table)?;
        let rows = data
            .ids
            .iter()
            .map(|id| {
                ids.iter()
                    .position(|i| i == id)
                    .map(|k| factors.rows[k].clone())
                    .ok_or_else(|| Error::Argument(format!("factors.csv has no row for {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        data.factors = Some(FactorTable::new(factors.names, rows)?);
    }
    Ok(data)
}

/// Decodes an image as-is, without cropping or resampling.
pub fn load_image_raw(path: &Path) -> Result<Tensor> {
    if !is_lossless(path) {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            reason: "only png, bmp and pnm images are accepted".into(),
        });
    }
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(rgb_to_tensor(&img.to_rgb8()))
}

pub fn load_image(path: &Path, target: usize) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .to_rgb8();
    let t = rgb_to_tensor(&img);
    resize_square(&center_crop(&t)?, target)
}

pub fn rgb_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::new(&[h as usize, w as usize, 3], data).expect("rgb buffer")
}

pub fn center_crop(t: &Tensor) -> Result<Tensor> {
    let (h, w, c) = t.hwc()?;
    let s = h.min(w);
    let (y0, x0) = ((h - s) / 2, (w - s) / 2);
    let mut out = Vec::with_capacity(s * s * c);
    for y in y0..y0 + s {
        out.extend_from_slice(&t.data()[((y * w) + x0) * c..((y * w) + x0 + s) * c]);
    }
    Tensor::new(&[s, s, c], out)
}

/// Resamples a square image to `target x target` with the warp module's
/// bilinear sampler, aligning pixel centres.
pub fn resize_square(t: &Tensor, target: usize) -> Result<Tensor> {
    let (h, w, _) = t.hwc()?;
    if h == target && w == target {
        return Ok(t.clone());
    }
    let mut coords = Coords::identity(target, target);
    let (sx, sy) = (w as f64 / target as f64, h as f64 / target as f64);
    for (u, v) in coords.u.iter_mut().zip(coords.v.iter_mut()) {
        *u = ((*u + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
        *v = ((*v + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
    }
    sample_grid(t, &coords)
}

/// Round-half-up quantisation of a `[0, 1]` value to a byte.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn tensor_to_rgb(t: &Tensor) -> Result<RgbImage> {
    let (h, w, c) = t.hwc()?;
    if c != 3 {
        return Err(Error::dim("rgb image", t.shape(), &[h, w, 3]));
    }
    let buf = t.data().iter().map(|&v| quantize(v)).collect();
    Ok(RgbImage::from_raw(w as u32, h as u32, buf).expect("rgb buffer size"))
}

pub fn save_png(t: &Tensor, path: &Path) -> Result<()> {
    tensor_to_rgb(t)?.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// Tiles equally sized images row-major, `columns` per row, into one PNG.
pub fn emit_grid(images: &[Tensor], columns: usize, path: &Path) -> Result<()> {
    grid_image(images, columns)?.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

pub fn grid_image(images: &[Tensor], columns: usize) -> Result<RgbImage> {
    let first = images
        .first()
        .ok_or_else(|| Error::Argument("cannot tile zero images".into()))?;
    if columns == 0 {
        return Err(Error::Argument("grid needs at least one column".into()));
    }
    let (h, w, _) = first.hwc()?;
    let cols = columns.min(images.len());
    let rows = images.len().div_ceil(cols);
    let mut grid = RgbImage::new((cols * w) as u32, (rows * h) as u32);
    for (k, img) in images.iter().enumerate() {
        first.check_same_shape(img, "grid images")?;
        let tile = tensor_to_rgb(img)?;
        let (gx, gy) = ((k % cols) * w, (k / cols) * h);
        for (x, y, p) in tile.enumerate_pixels() {
            grid.put_pixel(gx as u32 + x, gy as u32 + y, *p);
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(1.7), 255);
        assert_eq!(quantize(-0.2), 0);
    }

    #[test]
    fn grid_layout() {
        let imgs = vec![Tensor::full(&[4, 5, 3], 0.5); 11];
        let g = grid_image(&imgs, 11).unwrap();
        assert_eq!(g.dimensions(), (55, 4));
        let g = grid_image(&imgs[..1], 11).unwrap();
        assert_eq!(g.dimensions(), (5, 4));
        assert!(g.pixels().all(|p| p.0 == [128; 3]));
        let g = grid_image(&imgs, 4).unwrap();
        assert_eq!(g.dimensions(), (20, 12));
        assert!(grid_image(&[], 3).is_err());
    }

    #[test]
    fn resize_halving_is_box_average() {
        let t = Tensor::new(&[2, 2, 1], vec![0.0, 1.0, 2.0, 3.0])
            .unwrap()
            .reshape(&[2, 2, 1])
            .unwrap();
        let r = resize_square(&t, 1).unwrap();
        assert!((r.data()[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn dataset_rejects_duplicate_ids() {
        let imgs = vec![Tensor::zeros(&[2, 2, 3]); 2];
        assert!(Dataset::new(imgs, vec!["a".into(), "a".into()], None).is_err());
    }
}
