//! Prototype construction and nearest-neighbour decoding.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{euclidean_distance, zscore_apply, EmbeddingVector, NormStats};

/// One normalized mean vector per class.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    prototypes: BTreeMap<u32, EmbeddingVector>,
    stats: NormStats,
}

impl PrototypeSet {
    pub fn prototypes(&self) -> &BTreeMap<u32, EmbeddingVector> {
        &self.prototypes
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }
}

/// Individually normalized training vectors, for K-NN voting without averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarSet {
    exemplars: Vec<(u32, EmbeddingVector)>,
    stats: NormStats,
}

impl ExemplarSet {
    pub fn build(
        train_vectors: &BTreeMap<u32, Vec<EmbeddingVector>>,
        test_stats: &NormStats,
        eps: f64,
    ) -> Result<Self> {
        let mut exemplars = Vec::new();
        for (&class_id, vs) in train_vectors {
            if vs.is_empty() {
                return Err(Error::Empty("class training vectors"));
            }
            for v in vs {
                exemplars.push((class_id, zscore_apply(v, test_stats, eps)?));
            }
        }
        Ok(Self {
            exemplars,
            stats: test_stats.clone(),
        })
    }

    pub fn exemplars(&self) -> &[(u32, EmbeddingVector)] {
        &self.exemplars
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }
}

/// Averages each class's raw vectors, then normalizes the mean with `test_stats`.
pub fn build_prototypes(
    train_vectors: &BTreeMap<u32, Vec<EmbeddingVector>>,
    test_stats: &NormStats,
    eps: f64,
) -> Result<PrototypeSet> {
    let mut prototypes = BTreeMap::new();
    for (&class_id, vs) in train_vectors {
        let first = vs.first().ok_or(Error::Empty("class training vectors"))?;
        let mut acc = vec![0.0f64; first.dim()];
        for v in vs {
            if v.dim() != acc.len() {
                return Err(Error::Shape(format!(
                    "class {class_id}: training vectors of dims {} and {}",
                    acc.len(),
                    v.dim()
                )));
            }
            for (a, x) in acc.iter_mut().zip(v.as_slice()) {
                *a += x;
            }
        }
        let n = vs.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        let mean = EmbeddingVector::new(acc)?;
        prototypes.insert(class_id, zscore_apply(&mean, test_stats, eps)?);
    }
    Ok(PrototypeSet {
        prototypes,
        stats: test_stats.clone(),
    })
}

/// Nearest prototype (majority of the `k` nearest when `k > 1`).
pub fn classify(test_vec: &EmbeddingVector, protos: &PrototypeSet, k: usize) -> Result<u32> {
    knn_vote(test_vec, protos.prototypes.iter().map(|(c, v)| (*c, v)), k)
}

/// Majority vote over the `k` nearest individual exemplars.
pub fn classify_exemplars(test_vec: &EmbeddingVector, set: &ExemplarSet, k: usize) -> Result<u32> {
    knn_vote(test_vec, set.exemplars.iter().map(|(c, v)| (*c, v)), k)
}

/// Ranks references by (distance, class id), takes the first `k` and returns
/// the most frequent class. Equal vote counts go to the lowest class id.
pub fn knn_vote<'a>(
    query: &EmbeddingVector,
    references: impl IntoIterator<Item = (u32, &'a EmbeddingVector)>,
    k: usize,
) -> Result<u32> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let mut scored = references
        .into_iter()
        .map(|(class_id, v)| Ok((euclidean_distance(query, v)?, class_id)))
        .collect::<Result<Vec<(f64, u32)>>>()?;
    if scored.is_empty() {
        return Err(Error::Empty("reference set"));
    }
    let by_rank = |a: &(f64, u32), b: &(f64, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k == 1 {
        return Ok(scored.iter().min_by(|a, b| by_rank(a, b)).expect("non-empty").1);
    }
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, by_rank);
    }
    let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
    for &(_, class_id) in &scored[..k] {
        *votes.entry(class_id).or_default() += 1;
    }
    let (winner, _) = votes
        .into_iter()
        .fold(None, |best: Option<(u32, usize)>, (c, n)| match best {
            Some((_, bn)) if n.cmp(&bn) != Ordering::Greater => best,
            _ => Some((c, n)),
        })
        .expect("k >= 1");
    Ok(winner)
}
