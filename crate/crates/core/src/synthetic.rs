//! Seeded synthetic activation datasets with a controllable two-factor structure.
//!
//! Every image has a *content* factor and a *style* factor. One of them (the
//! `class_factor`) is fixed per class on a sphere of radius `class_radius`;
//! the other is a nuisance drawn from `nuisance_levels` sphere points assigned
//! round-robin inside each class. Each tap projects `[w_content * content;
//! w_style * style]` through a fixed random matrix into its hidden width, and
//! repeats that signal on every row of its activation with i.i.d. Gaussian
//! noise of standard deviation `sigma`.
//!
//! The decoder activation is `beams x tokens x 2048`; at token `t` the
//! class-defining factor is additionally scaled by `token_profile[t]`, which is
//! how the answer-bearing token position is modelled.
//!
//! Class separation relative to noise is governed by `class_radius / sigma`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::engine::seed::derive_seed;
use crate::error::{Error, Result};
use crate::representation::{ImageActivations, TapPoint};
use crate::store::{save_dataset, DatasetInfo};
use crate::tensor::EmbeddingTensor;

pub const VISUAL_SHAPE: [usize; 2] = [257, 1408];
pub const QFORMER_SHAPE: [usize; 3] = [1, 32, 768];
pub const ENCODER_SHAPE: [usize; 2] = [64, 2048];
pub const DECODER_HIDDEN: usize = 2048;

const STREAM_MEANS: u64 = 1;
const STREAM_PROJECTION: u64 = 2;
const STREAM_NOISE: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Content,
    Style,
}

/// How strongly one tap encodes each factor, and its noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TapSignal {
    pub content: f64,
    pub style: f64,
    pub sigma: f64,
}

impl TapSignal {
    pub const fn new(content: f64, style: f64, sigma: f64) -> Self {
        Self {
            content,
            style,
            sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TapMixing {
    pub visual_encoder: TapSignal,
    pub qformer: TapSignal,
    pub llm_encoder: TapSignal,
    pub llm_decoder: TapSignal,
}

impl TapMixing {
    pub fn get(&self, tap: TapPoint) -> TapSignal {
        match tap {
            TapPoint::VisualEncoder => self.visual_encoder,
            TapPoint::QFormer => self.qformer,
            TapPoint::LlmEncoder => self.llm_encoder,
            TapPoint::LlmDecoder => self.llm_decoder,
        }
    }

    pub fn get_mut(&mut self, tap: TapPoint) -> &mut TapSignal {
        match tap {
            TapPoint::VisualEncoder => &mut self.visual_encoder,
            TapPoint::QFormer => &mut self.qformer,
            TapPoint::LlmEncoder => &mut self.llm_encoder,
            TapPoint::LlmDecoder => &mut self.llm_decoder,
        }
    }

    /// Vision taps see only content; style enters progressively deeper in.
    pub fn with_sigma(sigma: f64) -> Self {
        Self {
            visual_encoder: TapSignal::new(1.0, 0.0, sigma),
            qformer: TapSignal::new(1.0, 0.25, sigma),
            llm_encoder: TapSignal::new(1.0, 0.5, sigma),
            llm_decoder: TapSignal::new(0.25, 1.0, sigma),
        }
    }
}

impl Default for TapMixing {
    fn default() -> Self {
        Self::with_sigma(0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub dataset: String,
    pub n_classes: usize,
    pub images_per_class: usize,
    pub content_dim: usize,
    pub style_dim: usize,
    pub class_factor: Factor,
    pub nuisance_levels: usize,
    pub class_radius: f64,
    pub taps: TapMixing,
    pub decoder_tokens: usize,
    pub beams: usize,
    /// Per-token scale on the class factor; defaults to [`token_profile_paperlike`].
    pub token_profile: Option<Vec<f64>>,
    pub class_names: Option<Vec<String>>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dataset: "synthetic".into(),
            n_classes: 2,
            images_per_class: 20,
            content_dim: 8,
            style_dim: 8,
            class_factor: Factor::Style,
            nuisance_levels: 2,
            class_radius: 1.0,
            taps: TapMixing::default(),
            decoder_tokens: 12,
            beams: 5,
            token_profile: None,
            class_names: None,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_classes == 0 {
            return bad("n_classes must be at least 1".into());
        }
        if self.images_per_class < 2 {
            return bad(format!(
                "images_per_class must be at least 2 (one shot plus one test image), got {}",
                self.images_per_class
            ));
        }
        if self.content_dim == 0 || self.style_dim == 0 {
            return bad("content_dim and style_dim must be at least 1".into());
        }
        if self.nuisance_levels == 0 {
            return bad("nuisance_levels must be at least 1".into());
        }
        if self.decoder_tokens == 0 || self.beams == 0 {
            return bad("decoder_tokens and beams must be at least 1".into());
        }
        if !(self.class_radius.is_finite() && self.class_radius > 0.0) {
            return bad("class_radius must be positive".into());
        }
        for tap in TapPoint::ALL {
            let s = self.taps.get(tap);
            if !(s.sigma.is_finite() && s.sigma >= 0.0) {
                return bad(format!("{tap}: sigma must be finite and non-negative"));
            }
            if !(s.content.is_finite() && s.style.is_finite()) {
                return bad(format!("{tap}: mixing weights must be finite"));
            }
        }
        if let Some(p) = &self.token_profile {
            if p.len() != self.decoder_tokens {
                return bad(format!(
                    "token_profile has {} entries for {} decoder tokens",
                    p.len(),
                    self.decoder_tokens
                ));
            }
            if p.iter().any(|w| !w.is_finite()) {
                return bad("token_profile entries must be finite".into());
            }
        }
        if let Some(names) = &self.class_names {
            if names.len() != self.n_classes {
                return bad(format!(
                    "{} class names for {} classes",
                    names.len(),
                    self.n_classes
                ));
            }
        }
        Ok(())
    }

    pub fn profile(&self) -> Result<Vec<f64>> {
        match &self.token_profile {
            Some(p) => Ok(p.clone()),
            None if self.decoder_tokens >= 2 => token_profile_paperlike(self.decoder_tokens),
            None => Ok(vec![1.0; self.decoder_tokens]),
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.class_names
            .clone()
            .unwrap_or_else(|| (0..self.n_classes).map(|c| format!("class {c}")).collect())
    }
}

/// Near-zero weight on the start token, a peak at position 1, halving after.
pub fn token_profile_paperlike(token_count: usize) -> Result<Vec<f64>> {
    if token_count < 2 {
        return Err(Error::Config(format!(
            "a token profile needs at least 2 tokens, got {token_count}"
        )));
    }
    Ok((0..token_count)
        .map(|t| match t {
            0 => 0.05,
            _ => 0.5f64.powi(t as i32 - 1),
        })
        .collect())
}

fn sphere_point(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| radius * x / norm).collect();
        }
    }
}

/// Row-major `hidden x latent` matrix with N(0, 1/latent) entries.
struct Projection {
    latent: usize,
    weights: Vec<f64>,
}

impl Projection {
    fn new(seed: u64, tap: TapPoint, hidden: usize, latent: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            &[STREAM_PROJECTION, u64::from(tap.code())],
        ));
        let scale = 1.0 / (latent as f64).sqrt();
        let weights = (0..hidden * latent)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { latent, weights }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.latent)
            .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }
}

fn tap_rows(tap: TapPoint, cfg: &SyntheticConfig) -> (Vec<usize>, usize) {
    match tap {
        TapPoint::VisualEncoder => (VISUAL_SHAPE.to_vec(), VISUAL_SHAPE[1]),
        TapPoint::QFormer => (QFORMER_SHAPE.to_vec(), QFORMER_SHAPE[2]),
        TapPoint::LlmEncoder => (ENCODER_SHAPE.to_vec(), ENCODER_SHAPE[1]),
        TapPoint::LlmDecoder => (vec![cfg.beams, cfg.decoder_tokens, DECODER_HIDDEN], DECODER_HIDDEN),
    }
}

/// Fills `rows` copies of the per-token signals, adding noise when `sigma > 0`.
///
/// `signals[t]` is repeated `repeats` times, for each `t` in order, and the
/// whole block is tiled `outer` times.
fn render(
    signals: &[Vec<f64>],
    repeats: usize,
    outer: usize,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f32> {
    let hidden = signals[0].len();
    let mut out = Vec::with_capacity(outer * signals.len() * repeats * hidden);
    for _ in 0..outer {
        for s in signals {
            for _ in 0..repeats {
                if sigma > 0.0 {
                    out.extend(
                        s.iter()
                            .map(|&x| (x + sigma * rng.sample::<f64, _>(StandardNormal)) as f32),
                    );
                } else {
                    out.extend(s.iter().map(|&x| x as f32));
                }
            }
        }
    }
    out
}

/// Generates the dataset in memory. Deterministic in `cfg.seed`.
pub fn generate(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let profile = cfg.profile()?;
    let (class_dim, nuisance_dim) = match cfg.class_factor {
        Factor::Content => (cfg.content_dim, cfg.style_dim),
        Factor::Style => (cfg.style_dim, cfg.content_dim),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_MEANS]));
    let class_means: Vec<Vec<f64>> = (0..cfg.n_classes)
        .map(|_| sphere_point(&mut rng, class_dim, cfg.class_radius))
        .collect();
    let nuisance_means: Vec<Vec<f64>> = (0..cfg.nuisance_levels)
        .map(|_| sphere_point(&mut rng, nuisance_dim, cfg.class_radius))
        .collect();

    let latent = cfg.content_dim + cfg.style_dim;
    let projections: Vec<(TapPoint, Projection)> = TapPoint::ALL
        .into_iter()
        .map(|tap| (tap, Projection::new(cfg.seed, tap, tap_rows(tap, cfg).1, latent)))
        .collect();

    // Latent vector [content; style] with the class factor scaled by `class_scale`.
    let latent_for = |class: usize, level: usize, signal: TapSignal, class_scale: f64| {
        let (content, style, c_scale, s_scale) = match cfg.class_factor {
            Factor::Content => (&class_means[class], &nuisance_means[level], class_scale, 1.0),
            Factor::Style => (&nuisance_means[level], &class_means[class], 1.0, class_scale),
        };
        content
            .iter()
            .map(|x| signal.content * c_scale * x)
            .chain(style.iter().map(|x| signal.style * s_scale * x))
            .collect::<Vec<f64>>()
    };

    let names = cfg.names();
    let total = cfg.n_classes * cfg.images_per_class;
    let images = (0..total)
        .into_par_iter()
        .map(|index| {
            let class = index / cfg.images_per_class;
            let within = index % cfg.images_per_class;
            let level = within % cfg.nuisance_levels;
            let mut acts = ImageActivations::new(image_id(class, within), class as u32);
            for (tap, proj) in &projections {
                let signal = cfg.taps.get(*tap);
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    cfg.seed,
                    &[STREAM_NOISE, index as u64, u64::from(tap.code())],
                ));
                let (shape, _) = tap_rows(*tap, cfg);
                let data = if *tap == TapPoint::LlmDecoder {
                    let per_token: Vec<Vec<f64>> = profile
                        .iter()
                        .map(|&w| proj.apply(&latent_for(class, level, signal, w)))
                        .collect();
                    render(&per_token, 1, cfg.beams, signal.sigma, &mut rng)
                } else {
                    let rows: usize = shape[..shape.len() - 1].iter().product();
                    let s = proj.apply(&latent_for(class, level, signal, 1.0));
                    render(std::slice::from_ref(&s), rows, 1, signal.sigma, &mut rng)
                };
                acts.insert_tap(*tap, EmbeddingTensor::new(shape, data)?)?;
            }
            Ok(acts)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(names, images)
}

fn image_id(class: usize, within: usize) -> String {
    format!("c{class:03}_{within:04}")
}

pub fn dataset_info(cfg: &SyntheticConfig) -> Result<DatasetInfo> {
    let serde_json::Value::Object(parameters) = serde_json::to_value(cfg)? else {
        unreachable!("config serializes to an object");
    };
    Ok(DatasetInfo {
        name: cfg.dataset.clone(),
        model: "synthetic".into(),
        decoder_shape: "beams x tokens x hidden".into(),
        parameters,
    })
}

/// Generates and writes EMB1 files plus manifest; returns the manifest path.
pub fn generate_to_dir(cfg: &SyntheticConfig, out_dir: &Path) -> Result<PathBuf> {
    if cfg.n_classes < 2 {
        return Err(Error::Config(
            "a written dataset needs at least 2 classes for its prompt".into(),
        ));
    }
    let dataset = generate(cfg)?;
    save_dataset(&dataset, &dataset_info(cfg)?, out_dir)
}
