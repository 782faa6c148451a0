//! Stochastic CP updates driven by one frontal slice at a time.
//!
//! The descent direction is the residual-correlation form
//! `(X_(1) − A (C ⊙ B)ᵀ)(C ⊙ B)` (one half of the negative loss gradient),
//! always applied with a `+η` step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor3, KruskalFactors, Matrix};

/// Factor entries above this magnitude abort the run.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum OptimizerKind {
    Sgd,
    Psgd,
    Nesgd,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 3] = [OptimizerKind::Sgd, OptimizerKind::Psgd, OptimizerKind::Nesgd];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "SGD",
            OptimizerKind::Psgd => "PSGD",
            OptimizerKind::Nesgd => "NESGD",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SGD" => Ok(OptimizerKind::Sgd),
            "PSGD" => Ok(OptimizerKind::Psgd),
            "NESGD" => Ok(OptimizerKind::Nesgd),
            other => Err(Error::InvalidArgument(format!("unknown optimizer {}", other))),
        }
    }
}

/// Learning-rate schedule `t → η(t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    /// `η(t) = eta0 / (1 + t)`.
    InverseTime { eta0: f64 },
    Constant { eta: f64 },
}

impl LrSchedule {
    pub fn at(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::InverseTime { eta0 } => eta0 / (1.0 + step as f64),
            LrSchedule::Constant { eta } => eta,
        }
    }
}

/// Standard deviation of the additive Gaussian perturbation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbScale {
    /// `σ(t) = factor · η(t)`, vanishing with the schedule.
    RelativeToLr { factor: f64 },
    Absolute { sigma: f64 },
}

impl PerturbScale {
    pub fn sigma(&self, eta: f64) -> f64 {
        match *self {
            PerturbScale::RelativeToLr { factor } => factor * eta,
            PerturbScale::Absolute { sigma } => sigma,
        }
    }
}

/// How the velocity absorbs a new direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityForm {
    /// `ν ← γν + g`: momentum accumulates across steps.
    Accumulating,
    /// `ν ← γν + (1−γ) g`: exponential moving average of directions.
    Ema,
}

/// Per-mode normalization of the slice direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepScaling {
    /// Divide each block's direction by the trace of its slice Gram matrix
    /// (an upper bound on the block's curvature), making `η` dimensionless.
    BlockTrace,
    Raw,
}

/// Where the L1 shrinkage enters the update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L1Mode {
    /// `− η(t)·β·sign(w)`.
    ScaledSubgradient,
    /// `− β·sign(w)` independent of the step size.
    Subgradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NesgdConfig {
    pub lr: LrSchedule,
    /// Friction γ in `[0, 1)`.
    pub gamma: f64,
    pub perturb: PerturbScale,
    pub l1_beta: f64,
    pub l1_mode: L1Mode,
    /// Evaluate the direction at the point the momentum is about to reach.
    pub nag_lookahead: bool,
    pub velocity: VelocityForm,
    pub step_scaling: StepScaling,
}

impl Default for NesgdConfig {
    fn default() -> Self {
        NesgdConfig {
            lr: LrSchedule::InverseTime { eta0: 1.0 },
            gamma: 0.9,
            perturb: PerturbScale::RelativeToLr { factor: 1e-3 },
            l1_beta: 1e-4,
            l1_mode: L1Mode::ScaledSubgradient,
            nag_lookahead: true,
            velocity: VelocityForm::Accumulating,
            step_scaling: StepScaling::BlockTrace,
        }
    }
}

impl NesgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("friction gamma {} outside [0, 1)", self.gamma)));
        }
        if !(self.l1_beta >= 0.0) {
            return Err(Error::InvalidArgument("l1_beta must be >= 0".into()));
        }
        let sigma_ok = match self.perturb {
            PerturbScale::RelativeToLr { factor } => factor >= 0.0,
            PerturbScale::Absolute { sigma } => sigma >= 0.0,
        };
        if !sigma_ok {
            return Err(Error::InvalidArgument("perturbation scale must be >= 0".into()));
        }
        let lr_ok = match self.lr {
            LrSchedule::InverseTime { eta0 } => eta0 >= 0.0,
            LrSchedule::Constant { eta } => eta >= 0.0,
        };
        if !lr_ok {
            return Err(Error::InvalidArgument("learning rate must be >= 0".into()));
        }
        Ok(())
    }
}

/// Optimizer state: velocities, step counter and the perturbation stream.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NesgdState {
    pub config: NesgdConfig,
    pub va: Matrix,
    pub vb: Matrix,
    pub vc: Matrix,
    pub step: u64,
    pub rng_seed: u64,
    rng: ChaCha8Rng,
}

impl NesgdState {
    pub fn new(config: NesgdConfig, dims: (usize, usize, usize), rank: usize, rng_seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(NesgdState {
            config,
            va: Matrix::zeros(dims.0, rank),
            vb: Matrix::zeros(dims.1, rank),
            vc: Matrix::zeros(dims.2, rank),
            step: 0,
            rng_seed,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        })
    }

    pub fn eta(&self) -> f64 {
        self.config.lr.at(self.step)
    }

    fn check_shapes(&self, f: &KruskalFactors) -> Result<()> {
        if self.va.shape() != f.a.shape() || self.vb.shape() != f.b.shape() || self.vc.shape() != f.c.shape() {
            return Err(Error::ShapeMismatch("optimizer velocities do not match factor shapes".into()));
        }
        Ok(())
    }
}

/// Descent direction for one mode from a full unfolding:
/// `(X_(m) − F_m KRᵀ) KR` where `KR` is the Khatri–Rao product of the other
/// two factors.
pub fn cp_gradient(x_unfold: &Matrix, f: &KruskalFactors, mode: usize) -> Result<Matrix> {
    let (ni, nj, nk) = f.dims();
    let expected = match mode {
        1 => (ni, nj * nk),
        2 => (nj, ni * nk),
        3 => (nk, ni * nj),
        m => return Err(Error::BadMode(m)),
    };
    if x_unfold.shape() != expected {
        return Err(Error::ShapeMismatch(format!(
            "mode-{} unfolding should be {:?}, got {:?}",
            mode,
            expected,
            x_unfold.shape()
        )));
    }
    let kr = f.complement_khatri_rao(mode)?;
    let residual = x_unfold.sub(&f.factor(mode)?.matmul(&kr.transpose())?)?;
    residual.matmul(&kr)
}

/// Ridge least-squares temporal row for a slice: `argmin_c ‖X_k − A diag(c) Bᵀ‖²`
/// with ridge `1e-10·trace` on the Gram `(AᵀA) ∘ (BᵀB)`.
pub fn solve_temporal_row(slice: &Matrix, a: &Matrix, b: &Matrix) -> Result<Vec<f64>> {
    if slice.shape() != (a.rows(), b.rows()) {
        return Err(Error::ShapeMismatch(format!(
            "slice {:?} against factors {}x{}",
            slice.shape(),
            a.rows(),
            b.rows()
        )));
    }
    let r = a.cols();
    let gram = a.gram().hadamard(&b.gram())?;
    // rhs_q = Σ_ij X_ij a_iq b_jq = diag(Aᵀ X B)
    let xb = slice.matmul(b)?;
    let rhs: Vec<f64> = (0..r).map(|q| (0..a.rows()).map(|i| a[(i, q)] * xb[(i, q)]).sum()).collect();
    let lambda = (1e-10 * gram.trace()).max(f64::MIN_POSITIVE);
    let mut g = crate::linalg::to_na(&gram);
    for q in 0..r {
        g[(q, q)] += lambda;
    }
    let rhs = nalgebra::DVector::from_vec(rhs);
    let sol = match g.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => g
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidArgument("singular temporal-row system".into()))?,
    };
    Ok(sol.iter().copied().collect())
}

/// Slice directions `(dA, dB, dc)` for `E = X_k − A diag(c) Bᵀ`:
/// `dA = E B diag(c)`, `dB = Eᵀ A diag(c)`, `dc_q = Σ_ij E_ij a_iq b_jq`.
pub fn slice_gradients(
    slice: &Matrix,
    a: &Matrix,
    b: &Matrix,
    c: &[f64],
    scaling: StepScaling,
) -> Result<(Matrix, Matrix, Vec<f64>)> {
    let (ni, nj) = slice.shape();
    let r = a.cols();
    if a.rows() != ni || b.rows() != nj || c.len() != r || b.cols() != r {
        return Err(Error::ShapeMismatch("slice gradient operands".into()));
    }
    let bd = Matrix::from_fn(nj, r, |j, q| b[(j, q)] * c[q]);
    let ad = Matrix::from_fn(ni, r, |i, q| a[(i, q)] * c[q]);
    let model = ad.matmul(&b.transpose())?;
    let e = slice.sub(&model)?;
    let mut ga = e.matmul(&bd)?;
    let mut gb = e.transpose().matmul(&ad)?;
    let eb = e.matmul(b)?;
    let mut gc: Vec<f64> = (0..r).map(|q| (0..ni).map(|i| a[(i, q)] * eb[(i, q)]).sum()).collect();
    if scaling == StepScaling::BlockTrace {
        let norm = |g: &mut [f64], denom: f64| {
            let inv = if denom > 0.0 { 1.0 / denom } else { 0.0 };
            g.iter_mut().for_each(|v| *v *= inv);
        };
        norm(ga.as_mut_slice(), bd.frobenius().powi(2));
        norm(gb.as_mut_slice(), ad.frobenius().powi(2));
        let lc: f64 = a.gram().hadamard(&b.gram())?.trace();
        norm(&mut gc, lc);
    }
    Ok((ga, gb, gc))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Applies one optimizer step from `slice`, whose temporal coefficients are
/// `c_row` (row `k` of `C` when `k` is given). When `k` is `None` only `A`
/// and `B` move.
pub(crate) fn step_on_slice(
    f: &mut KruskalFactors,
    st: &mut NesgdState,
    slice: &Matrix,
    k: Option<usize>,
    c_row: &mut [f64],
    kind: OptimizerKind,
) -> Result<()> {
    let cfg = st.config.clone();
    let eta = cfg.lr.at(st.step);
    let r = f.rank();
    match kind {
        OptimizerKind::Sgd | OptimizerKind::Psgd => {
            let (ga, gb, gc) = slice_gradients(slice, &f.a, &f.b, c_row, cfg.step_scaling)?;
            axpy(f.a.as_mut_slice(), eta, ga.as_slice());
            axpy(f.b.as_mut_slice(), eta, gb.as_slice());
            if k.is_some() {
                axpy(c_row, eta, &gc);
            }
            if kind == OptimizerKind::Psgd {
                let sigma = cfg.perturb.sigma(eta);
                perturb(&mut st.rng, sigma, f.a.as_mut_slice());
                perturb(&mut st.rng, sigma, f.b.as_mut_slice());
                if k.is_some() {
                    perturb(&mut st.rng, sigma, c_row);
                }
            }
        }
        OptimizerKind::Nesgd => {
            let gamma = cfg.gamma;
            let (ga, gb, gc) = if cfg.nag_lookahead && gamma > 0.0 {
                let ahead = |w: &Matrix, v: &Matrix| {
                    let mut p = w.clone();
                    axpy(p.as_mut_slice(), gamma * eta, v.as_slice());
                    p
                };
                let la = ahead(&f.a, &st.va);
                let lb = ahead(&f.b, &st.vb);
                let mut lc = c_row.to_vec();
                if let Some(k) = k {
                    axpy(&mut lc, gamma * eta, st.vc.row(k));
                }
                slice_gradients(slice, &la, &lb, &lc, cfg.step_scaling)?
            } else {
                slice_gradients(slice, &f.a, &f.b, c_row, cfg.step_scaling)?
            };
            let weight = match cfg.velocity {
                VelocityForm::Accumulating => 1.0,
                VelocityForm::Ema => 1.0 - gamma,
            };
            let sigma = cfg.perturb.sigma(eta);
            let shrink = match cfg.l1_mode {
                L1Mode::ScaledSubgradient => eta * cfg.l1_beta,
                L1Mode::Subgradient => cfg.l1_beta,
            };
            let update = |w: &mut [f64], v: &mut [f64], g: &[f64], rng: &mut ChaCha8Rng| {
                for (vi, gi) in v.iter_mut().zip(g) {
                    *vi = gamma * *vi + weight * gi;
                }
                for (wi, vi) in w.iter_mut().zip(v.iter()) {
                    let s = sign(*wi);
                    *wi += eta * vi;
                    if shrink != 0.0 {
                        *wi -= shrink * s;
                    }
                }
                perturb(rng, sigma, w);
            };
            update(f.a.as_mut_slice(), st.va.as_mut_slice(), ga.as_slice(), &mut st.rng);
            update(f.b.as_mut_slice(), st.vb.as_mut_slice(), gb.as_slice(), &mut st.rng);
            if let Some(k) = k {
                let mut vrow = st.vc.row(k).to_vec();
                update(c_row, &mut vrow, &gc, &mut st.rng);
                st.vc.row_mut(k).copy_from_slice(&vrow);
            }
        }
    }
    debug_assert_eq!(c_row.len(), r);
    st.step += 1;
    let limit = f.a.max_abs().max(f.b.max_abs()).max(c_row.iter().fold(0.0, |m: f64, v| m.max(v.abs())));
    if !(limit <= DIVERGENCE_LIMIT) {
        return Err(Error::Diverged { step: st.step });
    }
    Ok(())
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn perturb(rng: &mut ChaCha8Rng, sigma: f64, w: &mut [f64]) {
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        for wi in w.iter_mut() {
            *wi += normal.sample(rng);
        }
    }
}

/// Refits row `k` of `C` from its slice, then takes one optimizer step on
/// `A`, `B` and that row.
pub(crate) fn sweep_in_place(
    t: &DenseTensor3,
    f: &mut KruskalFactors,
    st: &mut NesgdState,
    kind: OptimizerKind,
    k: usize,
) -> Result<()> {
    let slice = t.frontal_slice(k);
    sweep_slice_in_place(&slice, f, st, kind, k)
}

pub(crate) fn sweep_slice_in_place(
    slice: &Matrix,
    f: &mut KruskalFactors,
    st: &mut NesgdState,
    kind: OptimizerKind,
    k: usize,
) -> Result<()> {
    let mut row = solve_temporal_row(slice, &f.a, &f.b)?;
    step_on_slice(f, st, slice, Some(k), &mut row, kind)?;
    f.c.row_mut(k).copy_from_slice(&row);
    Ok(())
}

/// One stochastic step using only frontal slice `sample_k`.
pub fn sgd_sweep(
    t: &DenseTensor3,
    f: &KruskalFactors,
    state: &NesgdState,
    kind: OptimizerKind,
    sample_k: usize,
) -> Result<(KruskalFactors, NesgdState)> {
    if t.dims() != f.dims() {
        return Err(Error::ShapeMismatch(format!("tensor {:?} vs factors {:?}", t.dims(), f.dims())));
    }
    if sample_k >= t.dims().2 {
        return Err(Error::InvalidArgument(format!("sample {} outside 0..{}", sample_k, t.dims().2)));
    }
    state.check_shapes(f)?;
    let mut f = f.clone();
    let mut st = state.clone();
    sweep_in_place(t, &mut f, &mut st, kind, sample_k)?;
    Ok((f, st))
}
