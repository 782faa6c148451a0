use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sgd::{step_on_slice, sweep_slice_in_place, solve_temporal_row, NesgdConfig, NesgdState, OptimizerKind};
use crate::error::{Error, Result};
use crate::tensor::{rmse, DenseTensor3, KruskalFactors, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamOptions {
    pub kind: OptimizerKind,
    pub config: NesgdConfig,
    /// Upper bound on passes over the training window.
    pub max_epochs: usize,
    /// Stop when the window RMSE changes by less than this between passes.
    pub tol: f64,
    pub seed: u64,
}

impl Default for StreamOptions {
    fn default() -> Self {
        StreamOptions { kind: OptimizerKind::Nesgd, config: NesgdConfig::default(), max_epochs: 50, tol: 1e-7, seed: 0 }
    }
}

/// A CP model that grows along the time mode as slices arrive.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StreamDecomposition {
    pub factors: KruskalFactors,
    pub state: NesgdState,
    pub kind: OptimizerKind,
    /// RMSE over the training window after each pass.
    pub epoch_rmse: Vec<f64>,
    #[serde(skip)]
    pub window: Option<DenseTensor3>,
}

impl StreamDecomposition {
    pub fn dims(&self) -> (usize, usize, usize) {
        self.factors.dims()
    }

    pub fn rank(&self) -> usize {
        self.factors.rank()
    }
}

/// Fits the training window with repeated shuffled passes of the configured
/// optimizer.
pub fn decompose_stream_init(t0: &DenseTensor3, rank: usize, opts: &StreamOptions) -> Result<StreamDecomposition> {
    let (ni, nj, nk) = t0.dims();
    if rank == 0 || rank > (ni * nj).min(nj * nk.max(1)).min(ni * nk.max(1)).max(1) {
        return Err(Error::InvalidArgument(format!("rank {} not supported for dims {:?}", rank, t0.dims())));
    }
    if opts.max_epochs == 0 {
        return Err(Error::InvalidArgument("max_epochs must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut f = super::random_factors(t0.dims(), rank, &mut rng);
    let mut state = NesgdState::new(opts.config.clone(), t0.dims(), rank, opts.seed.wrapping_add(0x9e37_79b9))?;
    let slices: Vec<Matrix> = (0..nk).map(|k| t0.frontal_slice(k)).collect();
    let mut order: Vec<usize> = (0..nk).collect();
    let mut epoch_rmse = Vec::new();
    for _ in 0..opts.max_epochs {
        order.shuffle(&mut rng);
        for &k in &order {
            sweep_slice_in_place(&slices[k], &mut f, &mut state, opts.kind, k)?;
        }
        let err = rmse(t0, &f)?;
        let done = epoch_rmse.last().map_or(false, |prev: &f64| (prev - err).abs() < opts.tol);
        epoch_rmse.push(err);
        if done {
            break;
        }
    }
    Ok(StreamDecomposition { factors: f, state, kind: opts.kind, epoch_rmse, window: Some(t0.clone()) })
}

/// Absorbs one new frontal slice: solves its temporal row by ridge least
/// squares against the current `A`, `B`, takes one optimizer step on `A` and
/// `B` from the slice, and appends the row to `C`.
pub fn update_online(d: &mut StreamDecomposition, slice: &Matrix) -> Result<Vec<f64>> {
    let (ni, nj, _) = d.dims();
    if slice.shape() != (ni, nj) {
        return Err(Error::ShapeMismatch(format!("slice {:?}, expected {:?}", slice.shape(), (ni, nj))));
    }
    let c_new = solve_temporal_row(slice, &d.factors.a, &d.factors.b)?;
    let mut scratch = c_new.clone();
    step_on_slice(&mut d.factors, &mut d.state, slice, None, &mut scratch, d.kind)?;
    d.factors.c.push_row(&c_new)?;
    let r = d.rank();
    d.state.vc.push_row(&vec![0.0; r])?;
    Ok(c_new)
}
