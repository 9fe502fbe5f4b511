//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes            | content                                        |
//! |------------------|------------------------------------------------|
//! | 8                | magic `HETLCKPT`                               |
//! | 4                | format version (`1`)                           |
//! | 4 + n            | TOML header: checkpoint metadata and training config |
//! | 4                | number of blocks                               |
//! | per block        | name (4 + n bytes), rows u64, cols u64, rows·cols f64 |
//!
//! Blocks are the model parameters in layer order (`layer{i}.weight`,
//! `layer{i}.bias`, `head.weight`, `head.bias`) followed by `class_centers`
//! and `subject_centers`.

use std::path::Path;

use hetloss_core::{CenterStore, Checkpoint, Dense, Head, Matrix, ModelParams, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"HETLCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    /// Fold the model was trained on; absent for a whole-dataset model.
    pub fold: Option<usize>,
    pub stage: u8,
    pub epoch: usize,
    pub step: u64,
    pub val_accuracy: f64,
    pub val_weighted_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    checkpoint: CheckpointMeta,
    train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointFile {
    pub meta: CheckpointMeta,
    pub config: TrainConfig,
    pub params: ModelParams,
    pub centers: CenterStore,
}

impl CheckpointFile {
    pub fn new(fold: Option<usize>, config: &TrainConfig, ckpt: &Checkpoint) -> Self {
        CheckpointFile {
            meta: CheckpointMeta {
                fold,
                stage: ckpt.stage,
                epoch: ckpt.epoch,
                step: ckpt.step,
                val_accuracy: ckpt.val_accuracy,
                val_weighted_f1: ckpt.val_weighted_f1,
            },
            config: config.clone(),
            params: ckpt.params.clone(),
            centers: ckpt.centers.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = toml::to_string(&Header {
            checkpoint: self.meta.clone(),
            train: self.config.clone(),
        })
        .expect("header is plain data");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_bytes(&mut out, header.as_bytes());

        let mut blocks: Vec<(String, usize, usize, &[f64])> = self.params.blocks();
        for (name, m) in [
            ("class_centers", &self.centers.class_centers),
            ("subject_centers", &self.centers.subject_centers),
        ] {
            blocks.push((name.to_owned(), m.rows(), m.cols(), m.as_slice()));
        }
        out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
        for (name, rows, cols, values) in blocks {
            put_bytes(&mut out, name.as_bytes());
            out.extend_from_slice(&(rows as u64).to_le_bytes());
            out.extend_from_slice(&(cols as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(r.error("not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.error(&format!("unsupported checkpoint version {version}")));
        }
        let header_len = r.u32()? as usize;
        let header_text = std::str::from_utf8(r.take(header_len)?).map_err(|_| r.error("header is not UTF-8"))?;
        let header: Header = toml::from_str(header_text).map_err(|e| r.error(&e.to_string()))?;

        let n_blocks = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(n_blocks);
        for _ in 0..n_blocks {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| r.error("block name is not UTF-8"))?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows.checked_mul(cols).ok_or_else(|| r.error("block too large"))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| r.error("block too large"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            blocks.push((name, Matrix::from_vec(rows, cols, data)?));
        }
        if r.pos != bytes.len() {
            return Err(r.error("trailing bytes"));
        }
        assemble(header, blocks).map_err(|m| r.error(&m))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        super::write_file(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        CheckpointFile::from_bytes(&bytes, path)
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

fn assemble(header: Header, blocks: Vec<(String, Matrix)>) -> Result<CheckpointFile, String> {
    let mut it = blocks.into_iter();
    let mut expect = |name: &str| -> Result<Matrix, String> {
        match it.next() {
            Some((n, m)) if n == name => Ok(m),
            Some((n, _)) => Err(format!("expected block `{name}`, found `{n}`")),
            None => Err(format!("missing block `{name}`")),
        }
    };
    let n_layers = header.train.hidden.len() + 1;
    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let weight = expect(&format!("layer{i}.weight"))?;
        let bias = expect(&format!("layer{i}.bias"))?;
        if bias.rows() != 1 || bias.cols() != weight.rows() {
            return Err(format!("layer{i}.bias has the wrong shape"));
        }
        if i > 0 && weight.cols() != layers.last().map_or(0, |l: &Dense| l.weight.rows()) {
            return Err(format!("layer{i}.weight does not chain"));
        }
        layers.push(Dense {
            weight,
            bias: bias.into_vec(),
        });
    }
    let weight = expect("head.weight")?;
    let bias = expect("head.bias")?;
    let feature_dim = layers.last().unwrap().weight.rows();
    if weight.cols() != feature_dim || bias.rows() != 1 || bias.cols() != weight.rows() {
        return Err("head shape does not match the feature layer".into());
    }
    let class_centers = expect("class_centers")?;
    let subject_centers = expect("subject_centers")?;
    if class_centers.cols() != feature_dim || subject_centers.cols() != feature_dim {
        return Err("center width does not match the feature layer".into());
    }
    if class_centers.rows() != weight.rows() {
        return Err("one class center per class expected".into());
    }
    if let Some((n, _)) = it.next() {
        return Err(format!("unexpected block `{n}`"));
    }
    Ok(CheckpointFile {
        meta: header.checkpoint,
        params: ModelParams {
            layers,
            head: Head {
                weight,
                bias: bias.into_vec(),
            },
            activation: header.train.activation,
        },
        config: header.train,
        centers: CenterStore {
            class_centers,
            subject_centers,
        },
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn error(&self, msg: &str) -> CliError {
        // the byte offset stands in for a line number
        CliError::format(self.path, self.pos, msg)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.error("unexpected end of file")),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hetloss_core::train::initial_checkpoint;
    use hetloss_core::{generate, GenConfig};

    fn sample() -> CheckpointFile {
        let ds = generate(&GenConfig::paper_analog(3)).unwrap().dataset;
        let config = TrainConfig {
            hidden: vec![5, 4],
            feature_dim: 3,
            ..TrainConfig::default()
        };
        CheckpointFile::new(Some(2), &config, &initial_checkpoint(&config, &ds))
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = CheckpointFile::from_bytes(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncation_and_corruption_detected() {
        let bytes = sample().to_bytes();
        assert!(CheckpointFile::from_bytes(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(CheckpointFile::from_bytes(&bad, Path::new("x")).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(CheckpointFile::from_bytes(&long, Path::new("x")).is_err());
    }
}
