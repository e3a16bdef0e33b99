//! Binary model checkpoints.
//!
//! ```text
//! b"CDCKPT01" | u64 LE header length | JSON header | f64 LE parameter blob
//! ```
//!
//! The header records the model kind, seed, detector and cost configuration,
//! the tensor layout and the SHA-256 of the blob, which is verified on load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::{DetectorConfig, HeadParams, Model};
use crate::error::{Error, Result};
use crate::losses::CostConfig;

pub const MAGIC: &[u8; 8] = b"CDCKPT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Heads,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorLayout {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: ModelKind,
    pub seed: u64,
    pub tag: String,
    pub detector: DetectorConfig,
    pub cost: CostConfig,
    pub layout: Vec<TensorLayout>,
    pub blob_sha256: String,
}

/// A model plus the settings it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub seed: u64,
    pub cost: CostConfig,
}

impl Checkpoint {
    pub fn heads(params: HeadParams, cost: CostConfig) -> Self {
        Self {
            seed: params.store.seed(),
            model: Model::Heads(params),
            cost,
        }
    }

    /// Stub that reports every ground-truth lesion with probability 1.
    pub fn oracle(detector: &DetectorConfig) -> Self {
        Self {
            model: Model::Oracle {
                mask_size: detector.mask_size,
            },
            seed: 0,
            cost: CostConfig::default(),
        }
    }

    pub fn tag(&self) -> String {
        match self.model {
            Model::Heads(_) => self.cost.tag(),
            Model::Oracle { .. } => "oracle".into(),
        }
    }
}

fn sha_hex(b: &[u8]) -> String {
    hex::encode(Sha256::digest(b))
}

/// Serialises a checkpoint. Identical inputs give identical bytes.
pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let (kind, detector, layout, blob) = match &ck.model {
        Model::Heads(p) => {
            let layout = p
                .store
                .iter()
                .map(|(n, t)| TensorLayout {
                    name: n.clone(),
                    rows: t.rows(),
                    cols: t.cols(),
                })
                .collect();
            let blob: Vec<u8> = p
                .store
                .flatten()
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect();
            (ModelKind::Heads, p.config.clone(), layout, blob)
        }
        Model::Oracle { mask_size } => (
            ModelKind::Oracle,
            DetectorConfig {
                mask_size: *mask_size,
                ..DetectorConfig::default()
            },
            Vec::new(),
            Vec::new(),
        ),
    };
    let header = CheckpointHeader {
        kind,
        seed: ck.seed,
        tag: ck.tag(),
        detector,
        cost: ck.cost,
        layout,
        blob_sha256: sha_hex(&blob),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Contract(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |detail: &str| Error::Format {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if hlen > body.len() {
        return Err(bad("truncated header"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&format!("header: {e}")))?;
    let blob = &body[hlen..];
    let found = sha_hex(blob);
    if found != header.blob_sha256 {
        return Err(Error::Checksum {
            what: format!("checkpoint {}", path.display()),
            expected: header.blob_sha256,
            found,
        });
    }
    let model = match header.kind {
        ModelKind::Oracle => Model::Oracle {
            mask_size: header.detector.mask_size,
        },
        ModelKind::Heads => {
            let mut params = HeadParams::init(header.detector.clone(), header.seed);
            let expected: Vec<TensorLayout> = params
                .store
                .iter()
                .map(|(n, t)| TensorLayout {
                    name: n.clone(),
                    rows: t.rows(),
                    cols: t.cols(),
                })
                .collect();
            if expected != header.layout {
                return Err(bad(
                    "parameter layout does not match the detector configuration",
                ));
            }
            if !blob.len().is_multiple_of(8) {
                return Err(bad("parameter blob is not a whole number of f64 values"));
            }
            let flat: Vec<f64> = blob
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.store.unflatten_into(&flat)?;
            Model::Heads(params)
        }
    };
    Ok(Checkpoint {
        model,
        seed: header.seed,
        cost: header.cost,
    })
}

/// Writes the checkpoint and returns the SHA-256 of the file contents.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<String> {
    let bytes = encode_checkpoint(ck)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha_hex(&bytes))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_heads_and_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = HeadParams::init(DetectorConfig::default(), 11);
        p.store.get_mut("roi_cls.b2").unwrap().data_mut()[0] = 0.25;
        let ck = Checkpoint::heads(p, CostConfig::lesion(3.0, 1.0));
        assert_eq!(ck.tag(), "a3b1");
        let path = dir.path().join("m.ckpt");
        let h1 = save_checkpoint(&ck, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ck);
        let h2 = save_checkpoint(&ck, &dir.path().join("m2.ckpt")).unwrap();
        assert_eq!(h1, h2);

        let o = Checkpoint::oracle(&DetectorConfig::default());
        save_checkpoint(&o, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), o);
    }

    #[test]
    fn corruption_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = Checkpoint::heads(
            HeadParams::init(DetectorConfig::default(), 1),
            CostConfig::default(),
        );
        save_checkpoint(&ck, &path).unwrap();
        let mut b = fs::read(&path).unwrap();
        let n = b.len();
        b[n - 3] ^= 0x40;
        fs::write(&path, &b).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::Checksum { .. })
        ));
        fs::write(&path, b"nonsense").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }
}
