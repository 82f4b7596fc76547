use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::representation::ImageActivations;

/// A labelled collection of per-image activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub images: Vec<ImageActivations>,
}

impl Dataset {
    pub fn new(class_names: Vec<String>, images: Vec<ImageActivations>) -> Result<Self> {
        let mut seen = HashSet::new();
        for img in &images {
            if !seen.insert(img.image_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate image id '{}'", img.image_id)));
            }
            if img.class_id as usize >= class_names.len() {
                return Err(Error::Manifest(format!(
                    "image '{}' has class {} but only {} classes are named",
                    img.image_id,
                    img.class_id,
                    class_names.len()
                )));
            }
        }
        Ok(Self {
            class_names,
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Image ids grouped by class, each list sorted so that episode sampling
    /// does not depend on storage order.
    pub fn class_index(&self) -> BTreeMap<u32, Vec<String>> {
        let mut index: BTreeMap<u32, Vec<String>> = BTreeMap::new();
        for img in &self.images {
            index.entry(img.class_id).or_default().push(img.image_id.clone());
        }
        for ids in index.values_mut() {
            ids.sort_unstable();
        }
        index
    }
}
