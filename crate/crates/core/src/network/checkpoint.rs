//! `FGPK1` binary checkpoints plus a JSON sidecar.
//!
//! Layout: the 5-byte magic `FGPK1`, then one record per layer until end of
//! input. A record is a kind tag byte (0 dense, 1 conv2d), the weight extents
//! as u64 LE (2 for dense, 4 for conv2d), the weights as f64 LE, the bias as
//! f64 LE (one per output unit or channel) and one mask byte per weight.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Architecture, LayerKind, MaskedLayer, Model};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"FGPK1";

/// One decoded layer record; geometry beyond the extents comes from the sidecar.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerRecord {
    pub kind_tag: u8,
    pub shape: Vec<usize>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub mask: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SidecarLayer {
    pub layer_id: usize,
    pub kind: String,
    pub shape: Vec<usize>,
    pub kept: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub architecture: Architecture,
    pub layers: Vec<SidecarLayer>,
    pub sha256: String,
}

pub fn encode(model: &Model) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for layer in model.layers() {
        out.push(layer.kind().tag());
        for &e in layer.weights().shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &w in layer.weights().data() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for &b in layer.bias().data() {
            out.extend_from_slice(&b.to_le_bytes());
        }
        out.extend_from_slice(layer.mask());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8, "extent")?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::Checkpoint(format!("{what} length overflows")))?;
        let raw = self.take(bytes, what)?;
        let vals: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("non-finite value in {what}")));
        }
        Ok(vals)
    }
}

/// Parses and validates a checkpoint byte stream.
pub fn decode(bytes: &[u8]) -> Result<Vec<LayerRecord>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("missing FGPK1 magic".into()));
    }
    let mut r = Reader {
        buf: bytes,
        pos: MAGIC.len(),
    };
    let mut records = Vec::new();
    while r.remaining() > 0 {
        let kind_tag = r.take(1, "kind tag")?[0];
        let rank = match kind_tag {
            0 => 2,
            1 => 4,
            t => return Err(Error::Checkpoint(format!("unknown layer kind tag {t}"))),
        };
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let e = r.u64()?;
            if e == 0 {
                return Err(Error::Checkpoint("zero extent".into()));
            }
            shape
                .push(usize::try_from(e).map_err(|_| Error::Checkpoint("extent overflow".into()))?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::Checkpoint("weight count overflows".into()))?;
        let outputs = if kind_tag == 0 { shape[1] } else { shape[0] };
        // each weight needs 9 bytes, each bias 8: reject before allocating
        let need = numel
            .checked_mul(9)
            .and_then(|v| v.checked_add(outputs.checked_mul(8)?))
            .ok_or_else(|| Error::Checkpoint("layer size overflows".into()))?;
        if need > r.remaining() {
            return Err(Error::Checkpoint("truncated layer record".into()));
        }
        let weights = r.f64s(numel, "weights")?;
        let bias = r.f64s(outputs, "bias")?;
        let mask = r.take(numel, "mask")?.to_vec();
        if mask.iter().any(|&m| m > 1) {
            return Err(Error::Checkpoint("mask byte other than 0/1".into()));
        }
        if weights.iter().zip(&mask).any(|(&w, &m)| m == 0 && w != 0.0) {
            return Err(Error::Checkpoint("masked weight is nonzero".into()));
        }
        records.push(LayerRecord {
            kind_tag,
            shape,
            weights,
            bias,
            mask,
        });
    }
    if records.is_empty() {
        return Err(Error::Checkpoint("checkpoint holds no layers".into()));
    }
    Ok(records)
}

/// Rebuilds a model from decoded records and its architecture descriptor.
pub fn model_from_records(arch: &Architecture, records: Vec<LayerRecord>) -> Result<Model> {
    let template = Model::new(arch, 0)?;
    if template.layers().len() != records.len() {
        return Err(Error::Checkpoint(format!(
            "architecture expects {} layers, checkpoint has {}",
            template.layers().len(),
            records.len()
        )));
    }
    let mut layers = Vec::with_capacity(records.len());
    for (i, (rec, t)) in records.into_iter().zip(template.layers()).enumerate() {
        if rec.kind_tag != t.kind().tag() || rec.shape != t.weights().shape() {
            return Err(Error::Checkpoint(format!(
                "layer {i} does not match the architecture: {:?} vs {:?}",
                rec.shape,
                t.weights().shape()
            )));
        }
        let kind: LayerKind = t.kind();
        let mut layer = MaskedLayer::new(
            i,
            kind,
            Tensor::new(rec.shape, rec.weights)?,
            Tensor::vector(rec.bias)?,
        )?;
        layer.set_mask(rec.mask)?;
        layers.push(layer);
    }
    Model::from_layers(arch, layers)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn sidecar(model: &Model, bytes: &[u8]) -> Sidecar {
    Sidecar {
        format: "FGPK1".into(),
        architecture: model.architecture().clone(),
        layers: model
            .layers()
            .iter()
            .map(|l| SidecarLayer {
                layer_id: l.layer_id(),
                kind: match l.kind() {
                    LayerKind::Dense => "dense".into(),
                    LayerKind::Conv2d(_) => "conv2d".into(),
                },
                shape: l.weights().shape().to_vec(),
                kept: l.kept(),
                total: l.len(),
            })
            .collect(),
        sha256: hex::encode(Sha256::digest(bytes)),
    }
}

/// Writes `path` and its `.json` sidecar; returns the binary's SHA-256.
pub fn save(model: &Model, path: &Path) -> Result<String> {
    let bytes = encode(model);
    let meta = sidecar(model, &bytes);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, &bytes)?;
    std::fs::write(
        sidecar_path(path),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;
    Ok(meta.sha256)
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path)?;
    let meta: Sidecar = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?;
    let digest = hex::encode(Sha256::digest(&bytes));
    if digest != meta.sha256 {
        return Err(Error::Checkpoint(format!(
            "{} does not match its sidecar hash",
            path.display()
        )));
    }
    model_from_records(&meta.architecture, decode(&bytes)?)
}
