//! Training-free few-shot image classification from the latent activations of
//! a visual question answering model.
//!
//! Images are passed to the model together with a multiple-choice question
//! naming the candidate classes. Activations captured at four points of the
//! network are pooled into feature vectors ([`representation`]), normalized
//! with statistics of the test set, and labelled by the nearest class
//! prototype built from a handful of labelled shots ([`engine`]).
//!
//! Activations travel between the extractor and the engine as EMB1 files plus
//! a JSON manifest ([`store`]). [`synthetic`] produces datasets with known
//! structure for testing without the model.

pub mod dataset;
pub mod engine;
pub mod error;
pub mod prompt;
pub mod representation;
pub mod store;
pub mod synthetic;
pub mod tensor;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use representation::{
    build_representation, select_decoder_token, ImageActivations, RepresentationKind,
    RepresentationSpec, TapPoint,
};
pub use tensor::{EmbeddingTensor, EmbeddingVector, NormStats};
