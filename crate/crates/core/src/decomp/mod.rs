//! CP decomposition: offline ALS and the online SGD family (SGD, PSGD,
//! NeSGD) with per-slice streaming updates.

mod als;
mod bench;
mod sgd;
mod stream;

pub use als::{cp_als, cp_als_from, AlsOptions, AlsReport};
pub use bench::{best_final_rmse, bench_optimizers, BenchOptions, BenchTrace};
pub use sgd::{
    cp_gradient, sgd_sweep, slice_gradients, solve_temporal_row, LrSchedule, NesgdConfig, NesgdState,
    OptimizerKind, PerturbScale, StepScaling, VelocityForm,
};
pub use stream::{decompose_stream_init, update_online, StreamDecomposition, StreamOptions};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{KruskalFactors, Matrix};

/// Factor entries i.i.d. uniform on `[0, 1)`.
pub fn random_factors(dims: (usize, usize, usize), rank: usize, rng: &mut ChaCha8Rng) -> KruskalFactors {
    let mut draw = |rows: usize| Matrix::from_fn(rows, rank, |_, _| rng.gen::<f64>());
    let a = draw(dims.0);
    let b = draw(dims.1);
    let c = draw(dims.2);
    KruskalFactors { a, b, c }
}
