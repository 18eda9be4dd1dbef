//! Multi-graph matching for semantic labeling of coronary artery trees.

pub mod autodiff;
pub mod embedding;
pub mod error;
pub mod graph;
pub mod labeling;
pub mod mgm;
pub mod numerics;
pub mod permutation;
pub mod pipeline;
pub mod seed;
pub mod stenosis;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
