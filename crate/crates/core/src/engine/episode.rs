use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// One seeded k-shot split: `k` labelled images per class, the rest held out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub seed: u64,
    pub k: usize,
    pub classes: BTreeMap<u32, ClassSplit>,
}

impl Episode {
    pub fn test_count(&self) -> usize {
        self.classes.values().map(|c| c.test.len()).sum()
    }
}

/// Draws `k` training ids per class uniformly without replacement.
///
/// Classes are visited in ascending id order from a single ChaCha8 stream, so
/// equal seeds and equal indices give equal episodes.
pub fn sample_episode(
    class_index: &BTreeMap<u32, Vec<String>>,
    k: usize,
    seed: u64,
) -> Result<Episode> {
    if k == 0 {
        return Err(Error::Config("shot count must be at least 1".into()));
    }
    if class_index.is_empty() {
        return Err(Error::Empty("class index"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes = BTreeMap::new();
    for (&class_id, ids) in class_index {
        if ids.len() <= k {
            return Err(Error::NotEnoughImages {
                class_id,
                available: ids.len(),
                needed: k + 1,
                k,
            });
        }
        let picked = rand::seq::index::sample(&mut rng, ids.len(), k);
        let mut is_train = vec![false; ids.len()];
        let train = picked
            .iter()
            .map(|i| {
                is_train[i] = true;
                ids[i].clone()
            })
            .collect();
        let test = ids
            .iter()
            .zip(&is_train)
            .filter(|(_, &t)| !t)
            .map(|(id, _)| id.clone())
            .collect();
        classes.insert(class_id, ClassSplit { train, test });
    }
    Ok(Episode { seed, k, classes })
}
