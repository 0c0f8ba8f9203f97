//! Binary checkpoint format.
//!
//! ```text
//! "DGN1"                      magic
//! u32 LE                      header length in bytes
//! header                      UTF-8 JSON (architecture, sigma, iteration, seed, mode, ...)
//! payload:
//!   u32 LE                    record count
//!   per record:
//!     u16 LE + bytes          tensor name
//!     u8 + u32 LE * ndim      shape
//!     values                  little-endian f32 (or f64 when the header says so)
//! u32 LE                      CRC-32 of the payload
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::ChainStore;
use crate::model::{scale_architecture, ArchitectureConfig, DeformableGenerator, LatentPair, WarpMode};
use crate::network::{LayerSpec, Network};
use crate::tensor::Tensor;
use crate::training::{Mode, OptimizerState};

pub const MAGIC: [u8; 4] = *b"DGN1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Everything needed to resume training or run analyses.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: DeformableGenerator,
    /// Inference network, VAE mode only.
    pub encoder: Option<Network>,
    pub chains: ChainStore,
    pub optimizer: Option<OptimizerState>,
    pub iteration: usize,
    pub seed: u64,
    pub mode: Mode,
}

impl Checkpoint {
    pub fn new(model: DeformableGenerator) -> Self {
        Checkpoint {
            model,
            encoder: None,
            chains: ChainStore::new(),
            optimizer: None,
            iteration: 0,
            seed: 0,
            mode: Mode::Abp,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dtype: Precision,
    /// Values were narrowed from 64-bit on save.
    downcast: bool,
    arch: ArchitectureConfig,
    alpha: f64,
    sigma: f64,
    max_displacement: f64,
    d_a: usize,
    d_g: usize,
    warp_mode: WarpMode,
    iteration: usize,
    seed: u64,
    mode: Mode,
    encoder_specs: Option<Vec<LayerSpec>>,
    optimizer_step: Option<u64>,
    chain_ids: Vec<String>,
}

fn records(ckpt: &Checkpoint) -> Result<Vec<(String, Tensor)>> {
    let mut out: Vec<(String, Tensor)> = Vec::new();
    for (name, t) in ckpt.model.param_names().into_iter().zip(ckpt.model.params()) {
        out.push((name, t.clone()));
    }
    if let Some(enc) = &ckpt.encoder {
        for (name, t) in enc.param_names("encoder").into_iter().zip(enc.params()) {
            out.push((name, t.clone()));
        }
    }
    if let Some(opt) = &ckpt.optimizer {
        for (k, t) in opt.first.iter().enumerate() {
            out.push((format!("optimizer.first.{k}"), t.clone()));
        }
        for (k, t) in opt.second.iter().enumerate() {
            out.push((format!("optimizer.second.{k}"), t.clone()));
        }
    }
    if !ckpt.chains.is_empty() {
        let n = ckpt.chains.len();
        let (d_a, d_g) = (ckpt.model.d_a(), ckpt.model.d_g());
        let mut za = Vec::with_capacity(n * d_a);
        let mut zg = Vec::with_capacity(n * d_g);
        for (_, z) in ckpt.chains.iter() {
            if z.za.len() != d_a || z.zg.len() != d_g {
                return Err(Error::dim("chain state", &[z.za.len(), z.zg.len()], &[d_a, d_g]));
            }
            za.extend_from_slice(&z.za);
            zg.extend_from_slice(&z.zg);
        }
        out.push(("chains.za".into(), Tensor::new(&[n, d_a], za)?));
        out.push(("chains.zg".into(), Tensor::new(&[n, d_g], zg)?));
    }
    Ok(out)
}

pub fn to_bytes(ckpt: &Checkpoint, precision: Precision) -> Result<Vec<u8>> {
    let m = &ckpt.model;
    let header = Header {
        format_version: FORMAT_VERSION,
        dtype: precision,
        downcast: precision == Precision::F32,
        arch: m.arch.clone(),
        alpha: m.arch.alpha,
        sigma: m.sigma,
        max_displacement: m.max_displacement,
        d_a: m.d_a(),
        d_g: m.d_g(),
        warp_mode: m.warp_mode,
        iteration: ckpt.iteration,
        seed: ckpt.seed,
        mode: ckpt.mode,
        encoder_specs: ckpt.encoder.as_ref().map(|e| e.specs().to_vec()),
        optimizer_step: ckpt.optimizer.as_ref().map(|o| o.step),
        chain_ids: ckpt.chains.iter().map(|(id, _)| id.clone()).collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let recs = records(ckpt)?;

    let mut payload = Vec::new();
    payload.extend_from_slice(&(recs.len() as u32).to_le_bytes());
    for (name, t) in &recs {
        let nb = name.as_bytes();
        payload.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        payload.extend_from_slice(nb);
        payload.push(t.shape().len() as u8);
        for &d in t.shape() {
            payload.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match precision {
            Precision::F32 => t
                .data()
                .iter()
                .for_each(|&v| payload.extend_from_slice(&(v as f32).to_le_bytes())),
            Precision::F64 => t
                .data()
                .iter()
                .for_each(|&v| payload.extend_from_slice(&v.to_le_bytes())),
        }
    }

    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Malformed("record runs past payload".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 {
        return Err(Error::Malformed("file too short".into()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let payload_start = 8 + hlen;
    if bytes.len() < payload_start + 4 {
        return Err(Error::Malformed("file truncated inside the header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[8..payload_start])?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::VersionSkew {
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let payload = &bytes[payload_start..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut r = Reader { buf: payload, pos: 0 };
    let count = r.u32()? as usize;
    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    for _ in 0..count {
        let nlen = r.u16()? as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec())
            .map_err(|_| Error::Malformed("tensor name is not UTF-8".into()))?;
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = match header.dtype {
            Precision::F32 => r
                .take(n * 4)?
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect(),
            Precision::F64 => r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        tensors.insert(name, Tensor::new(&shape, data)?);
    }
    if r.pos != payload.len() {
        return Err(Error::Malformed("trailing bytes after the last record".into()));
    }

    let mut take = |name: &str| {
        tensors
            .remove(name)
            .ok_or_else(|| Error::Malformed(format!("missing tensor {name}")))
    };
    let (a_specs, g_specs) = scale_architecture(&header.arch)?;
    let appearance = load_network(a_specs, "appearance", &mut take)?;
    let geometry = load_network(g_specs, "geometry", &mut take)?;
    let model = DeformableGenerator {
        arch: header.arch,
        appearance,
        geometry,
        sigma: header.sigma,
        max_displacement: header.max_displacement,
        warp_mode: header.warp_mode,
    };
    let encoder = match header.encoder_specs {
        Some(specs) => Some(load_network(specs, "encoder", &mut take)?),
        None => None,
    };
    let n_params = model.params().len() + encoder.as_ref().map_or(0, |e| e.params().len());
    let optimizer = match header.optimizer_step {
        Some(step) => Some(OptimizerState {
            step,
            first: (0..n_params)
                .map(|k| take(&format!("optimizer.first.{k}")))
                .collect::<Result<_>>()?,
            second: (0..n_params)
                .map(|k| take(&format!("optimizer.second.{k}")))
                .collect::<Result<_>>()?,
        }),
        None => None,
    };
    let mut chains = ChainStore::new();
    if !header.chain_ids.is_empty() {
        let za = take("chains.za")?;
        let zg = take("chains.zg")?;
        let n = header.chain_ids.len();
        if za.shape() != [n, header.d_a] || zg.shape() != [n, header.d_g] {
            return Err(Error::Malformed("chain tensors do not match chain ids".into()));
        }
        for (k, id) in header.chain_ids.into_iter().enumerate() {
            chains.insert(
                id,
                LatentPair {
                    za: za.data()[k * header.d_a..(k + 1) * header.d_a].to_vec(),
                    zg: zg.data()[k * header.d_g..(k + 1) * header.d_g].to_vec(),
                },
            );
        }
    }
    Ok(Checkpoint {
        model,
        encoder,
        chains,
        optimizer,
        iteration: header.iteration,
        seed: header.seed,
        mode: header.mode,
    })
}

fn load_network(
    specs: Vec<LayerSpec>,
    prefix: &str,
    take: &mut impl FnMut(&str) -> Result<Tensor>,
) -> Result<Network> {
    let mut weights = Vec::with_capacity(specs.len());
    let mut biases = Vec::with_capacity(specs.len());
    for i in 0..specs.len() {
        weights.push(take(&format!("{prefix}.{i}.weight"))?);
        biases.push(take(&format!("{prefix}.{i}.bias"))?);
    }
    Network::from_parts(specs, weights, biases)
}

pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    save_with(ckpt, path, Precision::F32)
}

/// Writes through a temporary file so a failed save never leaves a
/// half-written checkpoint at `path`.
pub fn save_with(ckpt: &Checkpoint, path: &Path, precision: Precision) -> Result<()> {
    let bytes = to_bytes(ckpt, precision)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("dgn.tmp");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    from_bytes(&std::fs::read(path)?)
}
