use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::engine::classify::{build_prototypes, classify, classify_exemplars, ExemplarSet};
use crate::engine::episode::Episode;
use crate::error::{Error, Result};
use crate::representation::{build_representation, RepresentationSpec};
use crate::tensor::{zscore_apply, zscore_fit_iter, EmbeddingVector};

/// Decoding settings shared by every trial of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSettings {
    pub k_neighbors: usize,
    pub prototype_mode: bool,
    pub eps: f64,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        Self {
            k_neighbors: 1,
            prototype_mode: true,
            eps: crate::tensor::DEFAULT_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: String,
    pub true_class: u32,
    pub predicted_class: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub accuracy: f64,
    pub predictions: Vec<Prediction>,
}

/// Pooled feature vectors for every image of a dataset under one representation.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    by_id: HashMap<String, (u32, EmbeddingVector)>,
}

impl FeatureTable {
    pub fn build(dataset: &Dataset, spec: &RepresentationSpec) -> Result<Self> {
        let rows = dataset
            .images
            .par_iter()
            .map(|img| {
                let v = build_representation(img, spec)?;
                Ok((img.image_id.clone(), (img.class_id, v)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            by_id: rows.into_iter().collect(),
        })
    }

    /// Table from already-pooled vectors.
    pub fn from_vectors(rows: impl IntoIterator<Item = (String, u32, EmbeddingVector)>) -> Self {
        Self {
            by_id: rows.into_iter().map(|(id, c, v)| (id, (c, v))).collect(),
        }
    }

    pub fn get(&self, image_id: &str) -> Result<&(u32, EmbeddingVector)> {
        self.by_id
            .get(image_id)
            .ok_or_else(|| Error::Config(format!("episode references unknown image '{image_id}'")))
    }

    pub fn dim(&self) -> Option<usize> {
        self.by_id.values().next().map(|(_, v)| v.dim())
    }
}

/// Builds representations for `dataset` and evaluates one episode.
pub fn run_trial(
    dataset: &Dataset,
    spec: &RepresentationSpec,
    episode: &Episode,
    settings: &ClassifierSettings,
) -> Result<TrialResult> {
    let features = FeatureTable::build(dataset, spec)?;
    run_trial_on_features(&features, episode, settings)
}

/// Evaluates one episode on precomputed features.
///
/// Normalization statistics are fitted on this episode's test vectors only and
/// applied to both the test vectors and the training side.
pub fn run_trial_on_features(
    features: &FeatureTable,
    episode: &Episode,
    settings: &ClassifierSettings,
) -> Result<TrialResult> {
    let mut test = Vec::with_capacity(episode.test_count());
    let mut train: BTreeMap<u32, Vec<EmbeddingVector>> = BTreeMap::new();
    for (&class_id, split) in &episode.classes {
        let shots = train.entry(class_id).or_default();
        for id in &split.train {
            shots.push(features.get(id)?.1.clone());
        }
        for id in &split.test {
            test.push((id.as_str(), class_id, &features.get(id)?.1));
        }
    }
    if test.is_empty() {
        return Err(Error::Empty("test split"));
    }

    let stats = zscore_fit_iter(test.iter().map(|(_, _, v)| *v))?;
    let eps = settings.eps;
    let k = settings.k_neighbors;

    enum Reference {
        Prototypes(crate::engine::classify::PrototypeSet),
        Exemplars(ExemplarSet),
    }
    let reference = if settings.prototype_mode {
        Reference::Prototypes(build_prototypes(&train, &stats, eps)?)
    } else {
        Reference::Exemplars(ExemplarSet::build(&train, &stats, eps)?)
    };

    let mut predictions = Vec::with_capacity(test.len());
    let mut correct = 0usize;
    for (image_id, true_class, v) in test {
        let z = zscore_apply(v, &stats, eps)?;
        let predicted_class = match &reference {
            Reference::Prototypes(p) => classify(&z, p, k)?,
            Reference::Exemplars(e) => classify_exemplars(&z, e, k)?,
        };
        correct += usize::from(predicted_class == true_class);
        predictions.push(Prediction {
            image_id: image_id.to_owned(),
            true_class,
            predicted_class,
        });
    }
    Ok(TrialResult {
        seed: episode.seed,
        accuracy: correct as f64 / predictions.len() as f64,
        predictions,
    })
}
