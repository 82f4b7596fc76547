//! On-disk activation datasets: EMB1 tap files plus a JSON manifest.

mod format;
mod manifest;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use format::{
    decode, encode, encode_to_vec, read_embeddings, write_embeddings, EmbeddingFile, EncodeError,
    FormatError, StoredRecord, DTYPE_F32_LE, FORMAT_VERSION, HEADER_LEN, MAGIC,
};
pub use manifest::Manifest;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::prompt::build_mc_prompt;
use crate::representation::{ImageActivations, TapPoint};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IncompleteImage {
    pub image_id: String,
    pub missing: Vec<TapPoint>,
}

/// What the loader saw while joining tap files.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CompletenessReport {
    pub records_per_tap: BTreeMap<TapPoint, usize>,
    pub complete_images: usize,
    /// Images present in at least one tap file but absent from another.
    pub incomplete: Vec<IncompleteImage>,
    /// Zero-shot texts whose image id is in no tap file.
    pub orphan_zero_shot: Vec<String>,
}

impl CompletenessReport {
    pub fn is_consistent(&self) -> bool {
        self.incomplete.is_empty() && self.orphan_zero_shot.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: Manifest,
    pub dataset: Dataset,
    pub report: CompletenessReport,
}

struct Joined {
    class_id: u32,
    taps: Vec<(TapPoint, StoredRecord)>,
}

/// Loads every tap file named by the manifest and joins them on image id.
///
/// Only images present in every tap file enter the dataset; the rest are
/// listed in the completeness report. Output is sorted by image id.
pub fn load_dataset(manifest_path: &Path) -> Result<LoadedDataset> {
    let manifest = Manifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    manifest.verify_prompt()?;
    if manifest.tap_files.is_empty() {
        return Err(Error::Manifest("no tap files listed".into()));
    }
    let missing = manifest.missing_files(base);
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }

    let taps: Vec<TapPoint> = manifest.tap_files.keys().copied().collect();
    let mut report = CompletenessReport::default();
    let mut joined: BTreeMap<String, Joined> = BTreeMap::new();
    for &tap in &taps {
        let path = manifest.resolve(base, tap).expect("listed tap");
        let file = read_embeddings(&path)?;
        if file.tap != tap {
            return Err(Error::Manifest(format!(
                "{} is listed as {tap} but its header says {}",
                path.display(),
                file.tap
            )));
        }
        report.records_per_tap.insert(tap, file.records.len());
        let mut seen = BTreeSet::new();
        for rec in file.records {
            if !seen.insert(rec.image_id.clone()) {
                return Err(Error::Manifest(format!(
                    "{}: duplicate image id '{}'",
                    path.display(),
                    rec.image_id
                )));
            }
            if rec.class_id as usize >= manifest.class_names.len() {
                return Err(Error::Manifest(format!(
                    "image '{}' has class {} but the manifest names {} classes",
                    rec.image_id,
                    rec.class_id,
                    manifest.class_names.len()
                )));
            }
            let entry = joined.entry(rec.image_id.clone()).or_insert_with(|| Joined {
                class_id: rec.class_id,
                taps: Vec::new(),
            });
            if entry.class_id != rec.class_id {
                return Err(Error::Manifest(format!(
                    "image '{}' has class {} in one tap file and {} in {}",
                    rec.image_id,
                    entry.class_id,
                    rec.class_id,
                    path.display()
                )));
            }
            entry.taps.push((tap, rec));
        }
    }

    let mut images = Vec::with_capacity(joined.len());
    for (image_id, j) in joined {
        if j.taps.len() < taps.len() {
            let have: BTreeSet<TapPoint> = j.taps.iter().map(|(t, _)| *t).collect();
            report.incomplete.push(IncompleteImage {
                image_id,
                missing: taps.iter().copied().filter(|t| !have.contains(t)).collect(),
            });
            continue;
        }
        let mut acts = ImageActivations::new(image_id, j.class_id);
        for (tap, rec) in j.taps {
            acts.insert_tap(tap, rec.into_tensor()?)?;
        }
        acts.zero_shot_text = manifest.zero_shot_texts.get(&acts.image_id).cloned();
        images.push(acts);
    }
    let known: BTreeSet<&str> = images
        .iter()
        .map(|i| i.image_id.as_str())
        .chain(report.incomplete.iter().map(|i| i.image_id.as_str()))
        .collect();
    report.orphan_zero_shot = manifest
        .zero_shot_texts
        .keys()
        .filter(|id| !known.contains(id.as_str()))
        .cloned()
        .collect();
    report.complete_images = images.len();

    let dataset = Dataset::new(manifest.class_names.clone(), images)?;
    Ok(LoadedDataset {
        manifest,
        dataset,
        report,
    })
}

/// Provenance recorded in a manifest written by [`save_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetInfo {
    pub name: String,
    pub model: String,
    pub decoder_shape: String,
    pub parameters: serde_json::Map<String, serde_json::Value>,
}

pub fn tap_file_name(tap: TapPoint) -> String {
    format!("{}.emb", tap.name())
}

/// Writes one EMB1 file per tap present in `dataset` plus `manifest.json`,
/// returning the manifest path.
pub fn save_dataset(dataset: &Dataset, info: &DatasetInfo, out_dir: &Path) -> Result<PathBuf> {
    let prompt = build_mc_prompt(&dataset.class_names)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut tap_files = BTreeMap::new();
    for tap in TapPoint::ALL {
        let records: Vec<StoredRecord> = dataset
            .images
            .iter()
            .filter_map(|img| {
                img.tap(tap)
                    .map(|t| StoredRecord::from_tensor(img.image_id.clone(), img.class_id, t))
            })
            .collect();
        if records.is_empty() {
            continue;
        }
        let file = tap_file_name(tap);
        write_embeddings(&records, tap, &out_dir.join(&file))?;
        tap_files.insert(tap, PathBuf::from(file));
    }
    let manifest = Manifest {
        dataset: info.name.clone(),
        class_names: dataset.class_names.clone(),
        prompt,
        tap_files,
        model: info.model.clone(),
        decoder_shape: info.decoder_shape.clone(),
        parameters: info.parameters.clone(),
        zero_shot_texts: dataset
            .images
            .iter()
            .filter_map(|i| i.zero_shot_text.clone().map(|t| (i.image_id.clone(), t)))
            .collect(),
    };
    let path = out_dir.join(MANIFEST_FILE);
    manifest.write(&path)?;
    Ok(path)
}
