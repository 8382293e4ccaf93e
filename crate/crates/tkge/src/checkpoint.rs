//! On-disk model format.
//!
//! A checkpoint directory holds five files: `manifest.json` describing
//! shapes and block layout, `params.bin` with every parameter as a raw
//! little-endian f64 in a fixed block order, and one plain-text label per
//! line in `entities.txt`, `predicates.txt` and `timestamps.txt`.
//!
//! The blob order is entity initial embeddings, entity velocities, subject
//! biases, object biases, predicate diagonals, predicate translations, then
//! (only for periodic representations) amplitude, frequency and phase.
//! Velocities are stored even when the representation ignores them so the
//! layout depends only on entity count, predicate count, dimension and the
//! periodic flag. Decoding rejects any non-finite value, any shape
//! mismatch and any unknown manifest field.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{TimeScale, Vocab};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, PeriodicBlocks, ReprVariant, ScoreVariant};
use crate::product::ProductSignature;
use crate::train::Checkpoint;

pub const FORMAT_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const ENTITIES_FILE: &str = "entities.txt";
pub const PREDICATES_FILE: &str = "predicates.txt";
pub const TIMESTAMPS_FILE: &str = "timestamps.txt";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct BlockEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub signature: String,
    pub repr: ReprVariant,
    pub score: ScoreVariant,
    pub time_scale: TimeScale,
    pub num_entities: usize,
    pub num_raw_predicates: usize,
    pub num_timestamps: usize,
    pub dim: usize,
    pub epoch: usize,
    pub best_val_mrr: f64,
    pub seed: u64,
    pub blocks: Vec<BlockEntry>,
    /// Byte length of `params.bin`; always 8x the summed block lengths.
    pub blob_len: usize,
}

fn ck(what: impl Into<String>) -> Error {
    Error::Checkpoint(what.into())
}

fn mul(a: usize, b: usize) -> Result<usize> {
    a.checked_mul(b).ok_or_else(|| ck("size overflow in block layout"))
}

/// Canonical block order and lengths for given shapes.
fn block_layout(
    num_entities: usize,
    num_predicates: usize,
    dim: usize,
    periodic: bool,
) -> Result<Vec<(&'static str, usize)>> {
    let ed = mul(num_entities, dim)?;
    let pd = mul(num_predicates, dim)?;
    let mut layout = vec![
        ("entity_initial", ed),
        ("entity_velocity", ed),
        ("bias_subj", num_entities),
        ("bias_obj", num_entities),
        ("pred_diag", pd),
        ("pred_translation", pd),
    ];
    if periodic {
        layout.extend([
            ("periodic_amplitude", ed),
            ("periodic_frequency", ed),
            ("periodic_phase", ed),
        ]);
    }
    Ok(layout)
}

impl Manifest {
    pub fn for_checkpoint(ckpt: &Checkpoint) -> Result<Manifest> {
        let p = &ckpt.params;
        let layout = block_layout(
            p.num_entities,
            p.num_predicates,
            p.dim,
            p.periodic.is_some(),
        )?;
        let total: usize = layout.iter().map(|(_, l)| l).sum();
        Ok(Manifest {
            format_version: FORMAT_VERSION,
            signature: ckpt.model.signature.to_string(),
            repr: ckpt.model.repr,
            score: ckpt.model.score,
            time_scale: ckpt.model.time_scale,
            num_entities: p.num_entities,
            num_raw_predicates: p.num_predicates / 2,
            num_timestamps: ckpt.num_timestamps,
            dim: p.dim,
            epoch: ckpt.epoch,
            best_val_mrr: ckpt.best_val_mrr,
            seed: ckpt.seed,
            blocks: layout
                .into_iter()
                .map(|(name, len)| BlockEntry { name: name.into(), len })
                .collect(),
            blob_len: mul(total, 8)?,
        })
    }

    /// Full semantic validation; returns the model configuration the
    /// manifest describes.
    pub fn validate(&self) -> Result<ModelConfig> {
        if self.format_version != FORMAT_VERSION {
            return Err(ck(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let signature: ProductSignature = self.signature.parse()?;
        if signature.total_dim() != self.dim {
            return Err(ck(format!(
                "dim {} does not match signature {} (total dim {})",
                self.dim,
                self.signature,
                signature.total_dim()
            )));
        }
        if self.num_entities == 0 || self.num_raw_predicates == 0 || self.num_timestamps == 0 {
            return Err(ck("entity, predicate and timestamp counts must be positive"));
        }
        if !self.best_val_mrr.is_finite() || !(0.0..=1.0).contains(&self.best_val_mrr) {
            return Err(ck(format!("best_val_mrr {} outside [0, 1]", self.best_val_mrr)));
        }
        let num_predicates = mul(self.num_raw_predicates, 2)?;
        let layout = block_layout(
            self.num_entities,
            num_predicates,
            self.dim,
            self.repr.uses_periodic(),
        )?;
        if self.blocks.len() != layout.len() {
            return Err(ck(format!(
                "manifest lists {} blocks, layout requires {}",
                self.blocks.len(),
                layout.len()
            )));
        }
        let mut total = 0usize;
        for (entry, (name, len)) in self.blocks.iter().zip(&layout) {
            if entry.name != *name || entry.len != *len {
                return Err(ck(format!(
                    "block {:?} of length {} where {name:?} of length {len} belongs",
                    entry.name, entry.len
                )));
            }
            total = total.checked_add(*len).ok_or_else(|| ck("size overflow"))?;
        }
        if self.blob_len != mul(total, 8)? {
            return Err(ck(format!(
                "blob_len {} does not match {} parameters",
                self.blob_len, total
            )));
        }
        Ok(ModelConfig {
            signature,
            repr: self.repr,
            score: self.score,
            time_scale: self.time_scale,
        })
    }
}

/// Parse and validate a manifest from raw bytes.
pub fn decode_manifest(bytes: &[u8]) -> Result<(Manifest, ModelConfig)> {
    let manifest: Manifest = serde_json::from_slice(bytes)?;
    let cfg = manifest.validate()?;
    Ok((manifest, cfg))
}

fn encode_params(params: &ModelParams) -> Vec<u8> {
    let blocks: Vec<&[f64]> = {
        let mut b = vec![
            params.entity_initial.as_slice(),
            params.entity_velocity.as_slice(),
            params.bias_subj.as_slice(),
            params.bias_obj.as_slice(),
            params.pred_diag.as_slice(),
            params.pred_translation.as_slice(),
        ];
        if let Some(p) = &params.periodic {
            b.extend([p.amplitude.as_slice(), p.frequency.as_slice(), p.phase.as_slice()]);
        }
        b
    };
    let total: usize = blocks.iter().map(|s| s.len()).sum();
    let mut out = Vec::with_capacity(total * 8);
    for block in blocks {
        for &v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decode a manifest's parameter blob. The manifest is re-validated first,
/// so block lengths are known to be consistent with `blob_len`; every value
/// must be finite.
pub fn decode_params(manifest: &Manifest, blob: &[u8]) -> Result<ModelParams> {
    manifest.validate()?;
    if blob.len() != manifest.blob_len {
        return Err(ck(format!(
            "params blob is {} bytes, manifest says {}",
            blob.len(),
            manifest.blob_len
        )));
    }
    let mut offset = 0usize;
    let mut read_block = |name: &str, len: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(len);
        for i in 0..len {
            let at = offset + i * 8;
            let v = f64::from_le_bytes(blob[at..at + 8].try_into().expect("8 bytes"));
            if !v.is_finite() {
                return Err(ck(format!("non-finite value in block {name} at index {i}")));
            }
            out.push(v);
        }
        offset += len * 8;
        Ok(out)
    };
    let mut blocks = Vec::with_capacity(manifest.blocks.len());
    for entry in &manifest.blocks {
        blocks.push(read_block(&entry.name, entry.len)?);
    }
    let mut it = blocks.into_iter();
    let mut next = || it.next().expect("layout verified");
    let entity_initial = next();
    let entity_velocity = next();
    let bias_subj = next();
    let bias_obj = next();
    let pred_diag = next();
    let pred_translation = next();
    let periodic = if manifest.repr.uses_periodic() {
        Some(PeriodicBlocks {
            amplitude: next(),
            frequency: next(),
            phase: next(),
        })
    } else {
        None
    };
    Ok(ModelParams {
        num_entities: manifest.num_entities,
        num_predicates: manifest.num_raw_predicates * 2,
        dim: manifest.dim,
        entity_initial,
        entity_velocity,
        bias_subj,
        bias_obj,
        pred_diag,
        pred_translation,
        periodic,
    })
}

fn write_labels(path: &Path, labels: &[String]) -> Result<()> {
    let mut out = String::new();
    for l in labels {
        if l.contains('\n') || l.contains('\r') {
            return Err(ck(format!("label {l:?} contains a line break")));
        }
        out.push_str(l);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_labels(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| ck(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// A loaded checkpoint with the vocabularies needed to answer queries.
#[derive(Debug, Clone)]
pub struct SavedModel {
    pub checkpoint: Checkpoint,
    pub entities: Vocab,
    pub predicates: Vocab,
    pub timestamps: Vec<String>,
}

pub fn save_checkpoint(
    dir: &Path,
    ckpt: &Checkpoint,
    entities: &Vocab,
    predicates: &Vocab,
    timestamps: &[String],
) -> Result<()> {
    if entities.len() != ckpt.params.num_entities {
        return Err(ck(format!(
            "{} entity labels for {} embeddings",
            entities.len(),
            ckpt.params.num_entities
        )));
    }
    if predicates.len() * 2 != ckpt.params.num_predicates {
        return Err(ck(format!(
            "{} predicate labels for {} predicate rows",
            predicates.len(),
            ckpt.params.num_predicates
        )));
    }
    if timestamps.len() != ckpt.num_timestamps {
        return Err(ck(format!(
            "{} timestamp labels for {} timestamps",
            timestamps.len(),
            ckpt.num_timestamps
        )));
    }
    crate::model::validate_shapes(&ckpt.params)?;
    let manifest = Manifest::for_checkpoint(ckpt)?;
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    fs::write(dir.join(PARAMS_FILE), encode_params(&ckpt.params))?;
    write_labels(&dir.join(ENTITIES_FILE), entities.labels())?;
    write_labels(&dir.join(PREDICATES_FILE), predicates.labels())?;
    write_labels(&dir.join(TIMESTAMPS_FILE), timestamps)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<SavedModel> {
    let manifest_bytes = fs::read(dir.join(MANIFEST_FILE))
        .map_err(|e| ck(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
    let (manifest, model) = decode_manifest(&manifest_bytes)?;
    let blob = fs::read(dir.join(PARAMS_FILE))
        .map_err(|e| ck(format!("{}: {e}", dir.join(PARAMS_FILE).display())))?;
    let params = decode_params(&manifest, &blob)?;
    crate::model::validate_shapes(&params)?;

    let entities = Vocab::from_labels(read_labels(&dir.join(ENTITIES_FILE))?)?;
    let predicates = Vocab::from_labels(read_labels(&dir.join(PREDICATES_FILE))?)?;
    let timestamps = read_labels(&dir.join(TIMESTAMPS_FILE))?;
    if entities.len() != manifest.num_entities {
        return Err(ck(format!(
            "entities.txt has {} labels, manifest says {}",
            entities.len(),
            manifest.num_entities
        )));
    }
    if predicates.len() != manifest.num_raw_predicates {
        return Err(ck(format!(
            "predicates.txt has {} labels, manifest says {}",
            predicates.len(),
            manifest.num_raw_predicates
        )));
    }
    if timestamps.len() != manifest.num_timestamps {
        return Err(ck(format!(
            "timestamps.txt has {} labels, manifest says {}",
            timestamps.len(),
            manifest.num_timestamps
        )));
    }
    Ok(SavedModel {
        checkpoint: Checkpoint {
            model,
            params,
            epoch: manifest.epoch,
            best_val_mrr: manifest.best_val_mrr,
            seed: manifest.seed,
            num_timestamps: manifest.num_timestamps,
        },
        entities,
        predicates,
        timestamps,
    })
}
