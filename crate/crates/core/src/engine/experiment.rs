//! Multi-trial experiments, the decoder token-slice ablation, and their reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::engine::episode::sample_episode;
use crate::engine::seed::trial_seed;
use crate::engine::trial::{run_trial_on_features, ClassifierSettings, FeatureTable, TrialResult};
use crate::error::{Error, Result};
use crate::prompt::{parse_zero_shot_answer, zero_shot_accuracy};
use crate::representation::{
    decoder_token_count, RepresentationKind, RepresentationSpec, TapPoint,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub specs: Vec<RepresentationSpec>,
    pub shots: Vec<usize>,
    pub trials: usize,
    pub k_neighbors: usize,
    pub prototype_mode: bool,
    pub seed: u64,
    pub eps: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            specs: RepresentationKind::ALL
                .into_iter()
                .map(RepresentationSpec::new)
                .collect(),
            shots: (1..=5).collect(),
            trials: 50,
            k_neighbors: 1,
            prototype_mode: true,
            seed: 0,
            eps: crate::tensor::DEFAULT_EPS,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_owned()));
        if self.specs.is_empty() {
            return bad("at least one representation spec is required");
        }
        if self.shots.is_empty() || self.shots.contains(&0) {
            return bad("shot counts must be non-empty and each at least 1");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.k_neighbors == 0 {
            return bad("K must be at least 1");
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return bad("eps must be a positive finite number");
        }
        Ok(())
    }

    pub fn classifier(&self) -> ClassifierSettings {
        ClassifierSettings {
            k_neighbors: self.k_neighbors,
            prototype_mode: self.prototype_mode,
            eps: self.eps,
        }
    }
}

/// All trials for one (representation, shot count) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub spec: RepresentationSpec,
    pub k: usize,
    pub mean: f64,
    pub std: f64,
    pub trials: Vec<TrialResult>,
}

impl CellReport {
    pub fn from_trials(spec: RepresentationSpec, k: usize, trials: Vec<TrialResult>) -> Self {
        let (mean, std) = mean_std(trials.iter().map(|t| t.accuracy));
        Self {
            spec,
            k,
            mean,
            std,
            trials,
        }
    }

    pub fn accuracies(&self) -> impl Iterator<Item = f64> + '_ {
        self.trials.iter().map(|t| t.accuracy)
    }
}

/// Population mean and standard deviation.
pub fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotSummary {
    pub accuracy: f64,
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub cells: Vec<CellReport>,
    pub zero_shot: Option<ZeroShotSummary>,
}

impl ExperimentReport {
    pub fn cell(&self, spec: &RepresentationSpec, k: usize) -> Option<&CellReport> {
        self.cells.iter().find(|c| &c.spec == spec && c.k == k)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Tidy per-trial CSV: `spec,k,trial,accuracy`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["spec", "k", "trial", "accuracy"])?;
        for cell in &self.cells {
            for (i, t) in cell.trials.iter().enumerate() {
                out.write_record([
                    cell.spec.to_string(),
                    cell.k.to_string(),
                    i.to_string(),
                    t.accuracy.to_string(),
                ])?;
            }
        }
        out.flush().map_err(|e| Error::io("csv output", e))?;
        Ok(())
    }

    /// Rows are representations, columns shot counts, plus a ZSP column when
    /// decoded answers were available. Values are percentages.
    pub fn summary_table(&self) -> String {
        let mut specs: Vec<RepresentationSpec> = Vec::new();
        for c in &self.cells {
            if !specs.contains(&c.spec) {
                specs.push(c.spec);
            }
        }
        let mut header = vec!["representation".to_owned()];
        header.extend(self.config.shots.iter().map(|k| format!("{k}-shot")));
        if self.zero_shot.is_some() {
            header.push("ZSP".to_owned());
        }
        let mut rows = vec![header];
        for spec in &specs {
            let mut row = vec![spec.to_string()];
            for &k in &self.config.shots {
                row.push(match self.cell(spec, k) {
                    Some(c) => format!("{:.2} ± {:.2}", 100.0 * c.mean, 100.0 * c.std),
                    None => "-".to_owned(),
                });
            }
            if let Some(z) = &self.zero_shot {
                row.push(format!("{:.2}", 100.0 * z.accuracy));
            }
            rows.push(row);
        }
        render_table(&rows)
    }
}

pub(crate) fn render_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(s, &w)| format!("{s:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", line.join(" | ").trim_end());
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            let _ = writeln!(out, "{}", rule.join("-+-"));
        }
    }
    out
}

fn run_cell(
    features: &FeatureTable,
    class_index: &BTreeMap<u32, Vec<String>>,
    spec: RepresentationSpec,
    seed_slot: usize,
    k: usize,
    cfg: &ExperimentConfig,
) -> Result<CellReport> {
    let settings = cfg.classifier();
    let trials = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let episode = sample_episode(class_index, k, trial_seed(cfg.seed, seed_slot, k, t))?;
            run_trial_on_features(features, &episode, &settings)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CellReport::from_trials(spec, k, trials))
}

/// Zero-shot accuracy over every image that carries decoded answer text.
pub fn zero_shot_summary(dataset: &Dataset) -> Result<Option<ZeroShotSummary>> {
    let n_choices = dataset.class_names.len();
    let (answers, truth): (Vec<_>, Vec<_>) = dataset
        .images
        .iter()
        .filter_map(|img| {
            img.zero_shot_text
                .as_deref()
                .map(|text| (parse_zero_shot_answer(text, n_choices), img.class_id as usize))
        })
        .unzip();
    if answers.is_empty() {
        return Ok(None);
    }
    Ok(Some(ZeroShotSummary {
        accuracy: zero_shot_accuracy(&answers, &truth)?,
        images: answers.len(),
    }))
}

/// Runs every (spec, shot count) cell for `cfg.trials` seeded episodes.
///
/// The seed of trial `t` in cell (spec `s`, shots `k`) depends only on
/// `(cfg.seed, s, k, t)`, so results do not depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<ExperimentReport> {
    cfg.validate()?;
    let class_index = dataset.class_index();
    let mut cells = Vec::with_capacity(cfg.specs.len() * cfg.shots.len());
    for (spec_index, spec) in cfg.specs.iter().enumerate() {
        let features = FeatureTable::build(dataset, spec)?;
        for &k in &cfg.shots {
            cells.push(run_cell(&features, &class_index, *spec, spec_index, k, cfg)?);
        }
    }
    Ok(ExperimentReport {
        config: cfg.clone(),
        cells,
        zero_shot: zero_shot_summary(dataset)?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedIndex {
    pub token_index: usize,
    /// Images whose decoder activation has too few tokens.
    pub images_lacking: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config: ExperimentConfig,
    pub cells: BTreeMap<usize, Vec<CellReport>>,
    pub skipped: Vec<SkippedIndex>,
}

impl AblationReport {
    pub fn mean(&self, token_index: usize, k: usize) -> Option<f64> {
        self.cells
            .get(&token_index)?
            .iter()
            .find(|c| c.k == k)
            .map(|c| c.mean)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `token_index,k,trial,accuracy`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["token_index", "k", "trial", "accuracy"])?;
        for (idx, cells) in &self.cells {
            for cell in cells {
                for (i, t) in cell.trials.iter().enumerate() {
                    out.write_record([
                        idx.to_string(),
                        cell.k.to_string(),
                        i.to_string(),
                        t.accuracy.to_string(),
                    ])?;
                }
            }
        }
        out.flush().map_err(|e| Error::io("csv output", e))?;
        Ok(())
    }

    /// `token_index,k,mean,std`, one row per bar.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["token_index", "k", "mean", "std"])?;
        for (idx, cells) in &self.cells {
            for cell in cells {
                out.write_record([
                    idx.to_string(),
                    cell.k.to_string(),
                    cell.mean.to_string(),
                    cell.std.to_string(),
                ])?;
            }
        }
        out.flush().map_err(|e| Error::io("csv output", e))?;
        Ok(())
    }

    pub fn summary_table(&self) -> String {
        let mut header = vec!["token".to_owned()];
        header.extend(self.config.shots.iter().map(|k| format!("{k}-shot")));
        let mut rows = vec![header];
        for (idx, cells) in &self.cells {
            let mut row = vec![idx.to_string()];
            row.extend(
                cells
                    .iter()
                    .map(|c| format!("{:.2} ± {:.2}", 100.0 * c.mean, 100.0 * c.std)),
            );
            rows.push(row);
        }
        render_table(&rows)
    }
}

/// Evaluates the decoder representation once per token position.
///
/// Every index shares the same episode seeds, so accuracy differences come
/// from the slice alone. Indices that some image's decoder activation cannot
/// supply are skipped and reported.
pub fn slice_ablation(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    token_indices: &[usize],
) -> Result<AblationReport> {
    cfg.validate()?;
    if token_indices.is_empty() {
        return Err(Error::Config("no token indices requested".into()));
    }
    let mut token_counts = Vec::with_capacity(dataset.len());
    for img in &dataset.images {
        token_counts.push(decoder_token_count(img).ok_or_else(|| Error::MissingTap {
            image_id: img.image_id.clone(),
            tap: TapPoint::LlmDecoder,
        })?);
    }
    let class_index = dataset.class_index();
    let mut cells = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut requested: Vec<usize> = token_indices.to_vec();
    requested.sort_unstable();
    requested.dedup();
    for idx in requested {
        let lacking = token_counts.iter().filter(|&&n| n <= idx).count();
        if lacking > 0 {
            skipped.push(SkippedIndex {
                token_index: idx,
                images_lacking: lacking,
            });
            continue;
        }
        let spec = RepresentationSpec::with_token(RepresentationKind::LlmDecoder, idx);
        let features = FeatureTable::build(dataset, &spec)?;
        let per_k = cfg
            .shots
            .iter()
            .map(|&k| run_cell(&features, &class_index, spec, 0, k, cfg))
            .collect::<Result<Vec<_>>>()?;
        cells.insert(idx, per_k);
    }
    if cells.is_empty() {
        return Err(Error::AllIndicesSkipped(
            skipped.iter().map(|s| s.token_index).collect(),
        ));
    }
    Ok(AblationReport {
        config: cfg.clone(),
        cells,
        skipped,
    })
}
