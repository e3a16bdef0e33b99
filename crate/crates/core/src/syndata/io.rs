//! Dataset directory layout:
//!
//! ```text
//! <dir>/manifest.json      slice ids, shapes, splits, SHA-256 of each channel buffer
//! <dir>/annotations.json   per-slice lesion boxes and run-length-encoded masks
//! <dir>/channels/<id>.f32  raw little-endian float32, C×H×W
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{rle_decode, rle_encode, Lesion, PixelBox, Split, SyntheticSlice};
use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "costdet-dataset";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub slice_id: String,
    pub split: Split,
    pub file: String,
    /// `[C, H, W]`
    pub shape: [usize; 3],
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub slice_count: usize,
    pub split_counts: SplitCounts,
    pub positive_count: usize,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotatedLesion {
    bbox: [u32; 4],
    significant: bool,
    mask_rle: Vec<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SliceAnnotations {
    slice_id: String,
    lesions: Vec<AnnotatedLesion>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Annotations {
    slices: Vec<SliceAnnotations>,
}

fn channel_bytes(slice: &SyntheticSlice) -> Vec<u8> {
    slice.data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Writes `slices` under `dir` (created if missing) and returns the manifest.
pub fn save_dataset(slices: &[SyntheticSlice], dir: &Path) -> Result<Manifest> {
    let chan_dir = dir.join("channels");
    fs::create_dir_all(&chan_dir).map_err(|e| Error::io(&chan_dir, e))?;

    let mut entries = Vec::with_capacity(slices.len());
    let mut annotations = Vec::with_capacity(slices.len());
    let mut counts = SplitCounts {
        train: 0,
        val: 0,
        test: 0,
    };
    for s in slices {
        let bytes = channel_bytes(s);
        let file = format!("channels/{}.f32", s.slice_id);
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            slice_id: s.slice_id.clone(),
            split: s.split,
            file,
            shape: [s.channels, s.height, s.width],
            sha256: sha256_hex(&bytes),
        });
        match s.split {
            Split::Train => counts.train += 1,
            Split::Val => counts.val += 1,
            Split::Test => counts.test += 1,
        }
        annotations.push(SliceAnnotations {
            slice_id: s.slice_id.clone(),
            lesions: s
                .lesions
                .iter()
                .map(|l| AnnotatedLesion {
                    bbox: [l.bbox.x1, l.bbox.y1, l.bbox.x2, l.bbox.y2],
                    significant: l.significant,
                    mask_rle: rle_encode(&l.mask),
                })
                .collect(),
        });
    }
    let manifest = Manifest {
        format: DATASET_FORMAT.to_string(),
        version: 1,
        slice_count: slices.len(),
        split_counts: counts,
        positive_count: slices.iter().filter(|s| s.is_positive()).count(),
        entries,
    };
    write_json(
        &dir.join("annotations.json"),
        &Annotations {
            slices: annotations,
        },
    )?;
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Reads a dataset written by [`save_dataset`], verifying every channel checksum.
pub fn load_dataset(dir: &Path) -> Result<Vec<SyntheticSlice>> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.is_file() {
        return Err(Error::io(
            &manifest_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "missing dataset manifest"),
        ));
    }
    let manifest: Manifest = read_json(&manifest_path)?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::Format {
            path: manifest_path,
            detail: format!("unexpected format tag {:?}", manifest.format),
        });
    }
    let annotations: Annotations = read_json(&dir.join("annotations.json"))?;
    if annotations.slices.len() != manifest.entries.len() {
        return Err(Error::Format {
            path: dir.join("annotations.json"),
            detail: "annotation count differs from manifest".into(),
        });
    }

    let mut out = Vec::with_capacity(manifest.entries.len());
    for (entry, ann) in manifest.entries.iter().zip(annotations.slices) {
        let slice_err = |detail: String| Error::SliceData {
            slice_id: entry.slice_id.clone(),
            detail,
        };
        if ann.slice_id != entry.slice_id {
            return Err(slice_err(format!(
                "annotations list slice {} at this position",
                ann.slice_id
            )));
        }
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path)
            .map_err(|e| slice_err(format!("cannot read {}: {e}", path.display())))?;
        let [c, h, w] = entry.shape;
        if bytes.len() != c * h * w * 4 {
            return Err(slice_err(format!(
                "channel buffer has {} bytes, expected {} (truncated or padded)",
                bytes.len(),
                c * h * w * 4
            )));
        }
        let found = sha256_hex(&bytes);
        if found != entry.sha256 {
            return Err(Error::Checksum {
                what: format!("slice {}", entry.slice_id),
                expected: entry.sha256.clone(),
                found,
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let mut lesions = Vec::with_capacity(ann.lesions.len());
        for l in ann.lesions {
            let mask = rle_decode(&l.mask_rle, w, h).map_err(|e| slice_err(e.to_string()))?;
            let bbox = PixelBox {
                x1: l.bbox[0],
                y1: l.bbox[1],
                x2: l.bbox[2],
                y2: l.bbox[3],
            };
            if mask.tight_box() != Some(bbox) {
                return Err(slice_err(format!(
                    "lesion bbox {:?} is not the tight box of its mask",
                    l.bbox
                )));
            }
            lesions.push(Lesion {
                bbox,
                mask,
                significant: l.significant,
            });
        }
        out.push(SyntheticSlice {
            slice_id: entry.slice_id.clone(),
            split: entry.split,
            channels: c,
            height: h,
            width: w,
            data,
            lesions,
        });
    }
    Ok(out)
}
