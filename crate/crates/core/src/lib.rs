//! Streaming tensor decomposition feeding an incremental one-class SVM.
//!
//! Incoming frontal slices (features × locations) are absorbed by an online
//! CP model; the temporal row of each slice is scored by a one-class SVM, and
//! negative scores are either absorbed into the model (when the location
//! factor indicates a global, environmental shift) or reported as anomalies.

pub mod advisor;
pub mod decomp;
pub mod error;
pub mod hexfloat;
pub mod incremental;
pub mod io;
pub mod linalg;
pub mod ocsvm;
pub mod pipeline;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{khatri_rao, kruskal_reconstruct, rmse, unfold, DenseTensor3, KruskalFactors, Matrix};
