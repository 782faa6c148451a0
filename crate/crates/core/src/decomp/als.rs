use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_gram_right;
use crate::tensor::{squared_error, DenseTensor3, KruskalFactors, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlsOptions {
    pub max_iters: usize,
    /// Stop when the relative change of the loss between sweeps falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for AlsOptions {
    fn default() -> Self {
        AlsOptions { max_iters: 500, tol: 1e-8, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlsReport {
    /// Loss `‖X − [[A,B,C]]‖²` at initialization followed by one entry per sweep.
    pub loss_trace: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// Sweeps in which a rank-deficient Gram matrix needed a ridge.
    pub ridge_sweeps: Vec<usize>,
}

/// Matricized tensor times Khatri–Rao product: `X_(mode) · KR(mode)`, computed
/// without forming either operand.
pub(crate) fn mttkrp(t: &DenseTensor3, f: &KruskalFactors, mode: usize) -> Matrix {
    let (ni, nj, nk) = t.dims();
    let r = f.rank();
    let rows = match mode {
        1 => ni,
        2 => nj,
        _ => nk,
    };
    let mut out = Matrix::zeros(rows, r);
    let vals = t.values();
    for i in 0..ni {
        let ai = f.a.row(i);
        for j in 0..nj {
            let bj = f.b.row(j);
            let base = (i * nj + j) * nk;
            for k in 0..nk {
                let x = vals[base + k];
                if x == 0.0 {
                    continue;
                }
                let ck = f.c.row(k);
                let (target, u, v) = match mode {
                    1 => (i, bj, ck),
                    2 => (j, ai, ck),
                    _ => (k, ai, bj),
                };
                let row = out.row_mut(target);
                for q in 0..r {
                    row[q] += x * u[q] * v[q];
                }
            }
        }
    }
    out
}

/// Hadamard product of the Gram matrices of the two factors other than `mode`,
/// which equals `KR(mode)ᵀ KR(mode)`.
pub(crate) fn complement_gram(f: &KruskalFactors, mode: usize) -> Matrix {
    let (x, y) = match mode {
        1 => (&f.b, &f.c),
        2 => (&f.a, &f.c),
        _ => (&f.a, &f.b),
    };
    x.gram().hadamard(&y.gram()).expect("factor ranks agree")
}

pub fn cp_als(t: &DenseTensor3, rank: usize, opts: &AlsOptions) -> Result<(KruskalFactors, AlsReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let init = super::random_factors(t.dims(), rank, &mut rng);
    cp_als_from(t, init, opts)
}

/// ALS starting from caller-provided factors. All-zero factor matrices are a
/// stationary point of every subproblem and are rejected.
pub fn cp_als_from(t: &DenseTensor3, init: KruskalFactors, opts: &AlsOptions) -> Result<(KruskalFactors, AlsReport)> {
    let (ni, nj, nk) = t.dims();
    let rank = init.rank();
    if init.dims() != t.dims() {
        return Err(Error::ShapeMismatch(format!("init {:?} vs tensor {:?}", init.dims(), t.dims())));
    }
    if rank == 0 || rank > (ni * nj).min(nj * nk).min(ni * nk) {
        return Err(Error::InvalidArgument(format!("rank {} outside 1..=min(IJ, JK, IK)", rank)));
    }
    if opts.max_iters == 0 || !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("als needs max_iters >= 1 and tol > 0".into()));
    }
    for (name, m) in [("A", &init.a), ("B", &init.b), ("C", &init.c)] {
        if m.max_abs() == 0.0 {
            return Err(Error::InvalidArgument(format!("zero initialization of factor {}", name)));
        }
    }

    let mut f = init;
    let mut report = AlsReport { loss_trace: vec![squared_error(t, &f)?], sweeps: 0, converged: false, ridge_sweeps: vec![] };
    for sweep in 1..=opts.max_iters {
        let mut ridged = false;
        for mode in 1..=3 {
            let rhs = mttkrp(t, &f, mode);
            let gram = complement_gram(&f, mode);
            let (solution, info) = solve_gram_right(&rhs, &gram)?;
            ridged |= info.ridge > 0.0;
            match mode {
                1 => f.a = solution,
                2 => f.b = solution,
                _ => f.c = solution,
            }
        }
        if ridged {
            report.ridge_sweeps.push(sweep);
        }
        let loss = squared_error(t, &f)?;
        let prev = *report.loss_trace.last().unwrap();
        report.loss_trace.push(loss);
        report.sweeps = sweep;
        if loss == 0.0 || (prev - loss).abs() <= opts.tol * prev {
            report.converged = true;
            break;
        }
    }
    Ok((f, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{khatri_rao, kruskal_reconstruct, rmse, unfold};
    use rand::Rng;

    fn planted(dims: (usize, usize, usize), rank: usize, seed: u64) -> (DenseTensor3, KruskalFactors) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = crate::decomp::random_factors(dims, rank, &mut rng);
        (kruskal_reconstruct(&f), f)
    }

    #[test]
    fn mttkrp_matches_explicit_product() {
        let (t, _) = planted((4, 3, 5), 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = crate::decomp::random_factors((4, 3, 5), 2, &mut rng);
        for mode in 1..=3 {
            let explicit = unfold(&t, mode).unwrap().matmul(&f.complement_khatri_rao(mode).unwrap()).unwrap();
            assert!(explicit.max_abs_diff(&mttkrp(&t, &f, mode)) < 1e-12);
            let g = f.complement_khatri_rao(mode).unwrap().gram();
            assert!(g.max_abs_diff(&complement_gram(&f, mode)) < 1e-12);
        }
        let _ = khatri_rao(&f.a, &f.b).unwrap();
    }

    #[test]
    fn recovers_noiseless_rank_one() {
        let (t, _) = planted((6, 5, 4), 1, 3);
        let (f, rep) = cp_als(&t, 1, &AlsOptions { max_iters: 50, ..Default::default() }).unwrap();
        assert!(rmse(&t, &f).unwrap() <= 1e-8, "rmse {}", rmse(&t, &f).unwrap());
        assert!(rep.sweeps <= 50);
    }

    #[test]
    fn recovers_noiseless_rank_two_long_time_mode() {
        let (t, _) = planted((20, 8, 200), 2, 5);
        let (f, _) = cp_als(&t, 2, &AlsOptions::default()).unwrap();
        let rel = squared_error(&t, &f).unwrap().sqrt() / t.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(rel <= 1e-4, "relative error {}", rel);
    }

    #[test]
    fn loss_trace_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = DenseTensor3::from_fn((5, 4, 6), |_, _, _| rng.gen());
        let (_, rep) = cp_als(&t, 3, &AlsOptions { max_iters: 100, ..Default::default() }).unwrap();
        for w in rep.loss_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn zero_tensor_converges_to_zero_and_zero_init_is_rejected() {
        let t = DenseTensor3::zeros((3, 3, 3));
        let (f, _) = cp_als(&t, 2, &AlsOptions::default()).unwrap();
        assert!(rmse(&t, &f).unwrap() < 1e-12);
        let zero = KruskalFactors::new(Matrix::zeros(3, 2), Matrix::zeros(3, 2), Matrix::zeros(3, 2)).unwrap();
        assert_eq!(cp_als_from(&t, zero, &AlsOptions::default()).unwrap_err().code(), "invalid-argument");
    }

    #[test]
    fn rank_bounds() {
        let t = DenseTensor3::zeros((2, 2, 2));
        assert!(cp_als(&t, 0, &AlsOptions::default()).is_err());
        assert!(cp_als(&t, 5, &AlsOptions::default()).is_err());
    }
}
