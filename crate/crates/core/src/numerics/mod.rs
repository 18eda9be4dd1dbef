//! Deterministic dense numerical kernels.

mod edt;
mod eigen;
mod hungarian;
mod matrix;
pub(crate) mod sinkhorn;

pub use edt::{euclidean_distance_transform, squared_distance_transform, BinaryMask};
pub use eigen::{sym_eig, EigenResult};
pub use hungarian::hungarian;
pub use matrix::Matrix;
pub use sinkhorn::{sinkhorn, sinkhorn_with, SinkhornConfig};
