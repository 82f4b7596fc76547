//! From raw tap activations to one feature vector per image.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tensor::{concat, mean_pool_except_last, EmbeddingTensor, EmbeddingVector};

/// Where inside the VQA network an activation was captured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapPoint {
    VisualEncoder,
    QFormer,
    LlmEncoder,
    LlmDecoder,
}

impl TapPoint {
    pub const ALL: [TapPoint; 4] = [
        TapPoint::VisualEncoder,
        TapPoint::QFormer,
        TapPoint::LlmEncoder,
        TapPoint::LlmDecoder,
    ];

    /// Stable serialization code.
    pub fn code(self) -> u8 {
        match self {
            TapPoint::VisualEncoder => 0,
            TapPoint::QFormer => 1,
            TapPoint::LlmEncoder => 2,
            TapPoint::LlmDecoder => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(usize::from(code)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TapPoint::VisualEncoder => "visual_encoder",
            TapPoint::QFormer => "qformer",
            TapPoint::LlmEncoder => "llm_encoder",
            TapPoint::LlmDecoder => "llm_decoder",
        }
    }

    /// Minimum rank accepted for this tap's raw activation.
    fn min_rank(self) -> usize {
        match self {
            TapPoint::LlmDecoder => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for TapPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RepresentationKind {
    Visual,
    QFormer,
    LlmEncoder,
    LlmDecoder,
    /// Decoder representation followed by the visual one.
    ConcatVisLlm,
}

impl RepresentationKind {
    pub const ALL: [RepresentationKind; 5] = [
        RepresentationKind::Visual,
        RepresentationKind::QFormer,
        RepresentationKind::LlmEncoder,
        RepresentationKind::LlmDecoder,
        RepresentationKind::ConcatVisLlm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RepresentationKind::Visual => "visual",
            RepresentationKind::QFormer => "qformer",
            RepresentationKind::LlmEncoder => "llm_encoder",
            RepresentationKind::LlmDecoder => "llm_decoder",
            RepresentationKind::ConcatVisLlm => "concat_vis_llm",
        }
    }

    pub fn required_taps(self) -> &'static [TapPoint] {
        match self {
            RepresentationKind::Visual => &[TapPoint::VisualEncoder],
            RepresentationKind::QFormer => &[TapPoint::QFormer],
            RepresentationKind::LlmEncoder => &[TapPoint::LlmEncoder],
            RepresentationKind::LlmDecoder => &[TapPoint::LlmDecoder],
            RepresentationKind::ConcatVisLlm => &[TapPoint::LlmDecoder, TapPoint::VisualEncoder],
        }
    }

    pub fn uses_decoder(self) -> bool {
        matches!(self, RepresentationKind::LlmDecoder | RepresentationKind::ConcatVisLlm)
    }

    /// Feature width produced from BLIP-2 (ViT-L/14 + Flan-T5-XL) activations.
    pub fn reference_dim(self) -> usize {
        match self {
            RepresentationKind::Visual => 1408,
            RepresentationKind::QFormer => 768,
            RepresentationKind::LlmEncoder | RepresentationKind::LlmDecoder => 2048,
            RepresentationKind::ConcatVisLlm => 3456,
        }
    }
}

impl FromStr for RepresentationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown representation kind '{s}'")))
    }
}

/// Recipe turning an image's activations into a feature vector.
///
/// Written as `kind` or `kind@token` (for example `llm_decoder@3`); the token
/// suffix is only meaningful for decoder-based kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RepresentationSpec {
    pub kind: RepresentationKind,
    pub decoder_token_index: usize,
}

impl RepresentationSpec {
    /// Position 0 holds the decoder start token; position 1 is the first answer token.
    pub const DEFAULT_TOKEN_INDEX: usize = 1;

    pub fn new(kind: RepresentationKind) -> Self {
        Self {
            kind,
            decoder_token_index: Self::DEFAULT_TOKEN_INDEX,
        }
    }

    pub fn with_token(kind: RepresentationKind, decoder_token_index: usize) -> Self {
        Self {
            kind,
            decoder_token_index,
        }
    }
}

impl fmt::Display for RepresentationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.kind.uses_decoder() && self.decoder_token_index != Self::DEFAULT_TOKEN_INDEX {
            write!(f, "{}@{}", self.kind.name(), self.decoder_token_index)
        } else {
            f.write_str(self.kind.name())
        }
    }
}

impl FromStr for RepresentationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.split_once('@') {
            None => Ok(Self::new(s.parse()?)),
            Some((kind, token)) => {
                let kind: RepresentationKind = kind.parse()?;
                if !kind.uses_decoder() {
                    return Err(Error::Config(format!(
                        "'{s}': token index only applies to decoder representations"
                    )));
                }
                let token = token
                    .parse()
                    .map_err(|_| Error::Config(format!("'{s}': bad token index")))?;
                Ok(Self::with_token(kind, token))
            }
        }
    }
}

impl Serialize for RepresentationSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RepresentationSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// All captured activations for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageActivations {
    pub image_id: String,
    pub class_id: u32,
    taps: BTreeMap<TapPoint, EmbeddingTensor>,
    pub zero_shot_text: Option<String>,
}

impl ImageActivations {
    pub fn new(image_id: impl Into<String>, class_id: u32) -> Self {
        Self {
            image_id: image_id.into(),
            class_id,
            taps: BTreeMap::new(),
            zero_shot_text: None,
        }
    }

    /// Adds or replaces the activation for `tap`, checking its rank.
    pub fn insert_tap(&mut self, tap: TapPoint, tensor: EmbeddingTensor) -> Result<()> {
        if tensor.rank() < tap.min_rank() || (tap == TapPoint::LlmDecoder && tensor.rank() != 3) {
            return Err(Error::Shape(format!(
                "image '{}': {tap} activation has rank {} (shape {:?})",
                self.image_id,
                tensor.rank(),
                tensor.shape()
            )));
        }
        self.taps.insert(tap, tensor);
        Ok(())
    }

    pub fn with_tap(mut self, tap: TapPoint, tensor: EmbeddingTensor) -> Result<Self> {
        self.insert_tap(tap, tensor)?;
        Ok(self)
    }

    pub fn tap(&self, tap: TapPoint) -> Option<&EmbeddingTensor> {
        self.taps.get(&tap)
    }

    pub fn taps(&self) -> impl Iterator<Item = (TapPoint, &EmbeddingTensor)> {
        self.taps.iter().map(|(t, v)| (*t, v))
    }

    pub fn has_taps(&self, taps: &[TapPoint]) -> bool {
        taps.iter().all(|t| self.taps.contains_key(t))
    }

    fn require(&self, tap: TapPoint) -> Result<&EmbeddingTensor> {
        self.taps.get(&tap).ok_or_else(|| Error::MissingTap {
            image_id: self.image_id.clone(),
            tap,
        })
    }
}

/// Extracts the `beams x hidden` block at one token position of a
/// `beams x tokens x hidden` decoder activation.
pub fn select_decoder_token(t: &EmbeddingTensor, token_index: usize) -> Result<EmbeddingTensor> {
    let &[beams, tokens, hidden] = t.shape() else {
        return Err(Error::Shape(format!(
            "decoder activation must be rank 3, got shape {:?}",
            t.shape()
        )));
    };
    if token_index >= tokens {
        return Err(Error::TokenIndexOutOfRange {
            index: token_index,
            available: tokens,
        });
    }
    let mut out = Vec::with_capacity(beams * hidden);
    for beam in t.data().chunks_exact(tokens * hidden) {
        let start = token_index * hidden;
        out.extend_from_slice(&beam[start..start + hidden]);
    }
    EmbeddingTensor::new(vec![beams, hidden], out)
}

/// Number of decoder tokens in `acts`, if it carries a decoder activation.
pub fn decoder_token_count(acts: &ImageActivations) -> Option<usize> {
    acts.tap(TapPoint::LlmDecoder).map(|t| t.shape()[1])
}

pub fn build_representation(
    acts: &ImageActivations,
    spec: &RepresentationSpec,
) -> Result<EmbeddingVector> {
    match spec.kind {
        RepresentationKind::Visual => pool_tap(acts, TapPoint::VisualEncoder),
        RepresentationKind::QFormer => pool_tap(acts, TapPoint::QFormer),
        RepresentationKind::LlmEncoder => pool_tap(acts, TapPoint::LlmEncoder),
        RepresentationKind::LlmDecoder => decoder_vector(acts, spec.decoder_token_index),
        RepresentationKind::ConcatVisLlm => {
            let decoder = decoder_vector(acts, spec.decoder_token_index)?;
            let visual = pool_tap(acts, TapPoint::VisualEncoder)?;
            Ok(concat(&decoder, &visual))
        }
    }
}

fn pool_tap(acts: &ImageActivations, tap: TapPoint) -> Result<EmbeddingVector> {
    mean_pool_except_last(acts.require(tap)?)
}

// Slice first, then average over beams.
fn decoder_vector(acts: &ImageActivations, token_index: usize) -> Result<EmbeddingVector> {
    let sliced = select_decoder_token(acts.require(TapPoint::LlmDecoder)?, token_index)?;
    mean_pool_except_last(&sliced)
}
