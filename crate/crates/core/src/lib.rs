//! Four-class breast-density classification at desk scale: synthetic
//! four-view phantoms, histogram-feature baselines, a multi-column
//! convolutional network, and the evaluation and agreement metrics used to
//! compare them.

pub mod baseline;
pub mod cnn;
pub mod corpus;
pub mod dataset;
pub mod evalkit;
pub mod experiment;
pub mod numerics;
pub mod seeding;
pub mod synthgen;
pub mod types;

pub use types::{BiRads, DensityClass, ViewImage, ViewKind};
