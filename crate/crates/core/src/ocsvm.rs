//! Batch one-class SVM in the standard dual form
//! `min ½ αᵀKα  s.t.  0 ≤ α_i ≤ 1/(νn),  Σα_i = 1`
//! with decision function `g(x) = Σ_j α_j K(x, x_j) − ρ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::incremental::BorderedSystem;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum KernelKind {
    Rbf,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// RBF bandwidth; ignored by the linear kernel.
    pub sigma: f64,
}

impl KernelSpec {
    pub fn rbf(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("rbf sigma must be > 0, got {}", sigma)));
        }
        Ok(KernelSpec { kind: KernelKind::Rbf, sigma })
    }

    pub fn linear() -> Self {
        KernelSpec { kind: KernelKind::Linear, sigma: 1.0 }
    }

    /// RBF with `σ` set to the median pairwise Euclidean distance.
    pub fn rbf_median_heuristic(x: &[Vec<f64>]) -> Result<Self> {
        let mut d = Vec::with_capacity(x.len() * x.len().saturating_sub(1) / 2);
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                d.push(sq_dist(&x[i], &x[j]).sqrt());
            }
        }
        d.retain(|v| *v > 0.0);
        if d.is_empty() {
            return KernelSpec::rbf(1.0);
        }
        d.sort_by(|a, b| a.total_cmp(b));
        KernelSpec::rbf(d[d.len() / 2])
    }

    #[inline]
    pub fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Rbf => (-sq_dist(x, y) / (2.0 * self.sigma * self.sigma)).exp(),
            KernelKind::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kind == KernelKind::Rbf && !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("rbf sigma must be > 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

#[inline]
fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn kernel_eval(k: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("kernel on vectors of length {} and {}", x.len(), y.len())));
    }
    Ok(k.eval_unchecked(x, y))
}

/// Membership of a training index in the KKT partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SetLabel {
    /// `0 < α < C`, `g = 0`.
    Margin,
    /// `α = C`, `g ≤ 0`.
    Error,
    /// `α = 0`, `g ≥ 0`.
    Reserve,
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Partition {
    pub margin: Vec<usize>,
    pub error: Vec<usize>,
    pub reserve: Vec<usize>,
}

/// Trained one-class SVM.
#[derive(Clone, Debug)]
pub struct OcsvmModel {
    pub(crate) train_x: Vec<Vec<f64>>,
    pub(crate) alpha: Vec<f64>,
    pub(crate) rho: f64,
    pub(crate) nu: f64,
    pub(crate) kernel: KernelSpec,
    /// Upper bound on α; `1/(νn)` whenever the model is at rest.
    pub(crate) c_bound: f64,
    pub(crate) labels: Vec<SetLabel>,
    /// Cached `g(x_i)` for every training vector.
    pub(crate) g: Vec<f64>,
    pub(crate) system: BorderedSystem,
}

impl OcsvmModel {
    pub fn n(&self) -> usize {
        self.train_x.len()
    }

    pub fn dim(&self) -> usize {
        self.train_x.first().map_or(0, |x| x.len())
    }

    pub fn train_x(&self) -> &[Vec<f64>] {
        &self.train_x
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn c_bound(&self) -> f64 {
        self.c_bound
    }

    pub fn labels(&self) -> &[SetLabel] {
        &self.labels
    }

    pub fn system(&self) -> &BorderedSystem {
        &self.system
    }

    /// Decision values of the training vectors as maintained by the model.
    pub fn training_decision_values(&self) -> &[f64] {
        &self.g
    }

    pub fn objective(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n() {
            if self.alpha[i] == 0.0 {
                continue;
            }
            for j in 0..self.n() {
                s += self.alpha[i] * self.alpha[j] * self.kernel.eval_unchecked(&self.train_x[i], &self.train_x[j]);
            }
        }
        0.5 * s
    }

    /// `Σ_j α_j K(x, x_j)`.
    pub(crate) fn weighted_sum(&self, x: &[f64]) -> f64 {
        self.alpha
            .iter()
            .zip(&self.train_x)
            .filter(|(a, _)| **a != 0.0)
            .map(|(a, xj)| a * self.kernel.eval_unchecked(x, xj))
            .sum()
    }

    /// Assembles a model from its serialized parts, recomputing the partition,
    /// cached decision values and the bordered inverse.
    pub fn from_parts(train_x: Vec<Vec<f64>>, alpha: Vec<f64>, rho: f64, nu: f64, kernel: KernelSpec) -> Result<Self> {
        kernel.validate()?;
        let n = train_x.len();
        if n == 0 || alpha.len() != n {
            return Err(Error::ShapeMismatch(format!("{} vectors with {} coefficients", n, alpha.len())));
        }
        let d = train_x[0].len();
        if train_x.iter().any(|x| x.len() != d) {
            return Err(Error::ShapeMismatch("training vectors differ in length".into()));
        }
        if train_x.iter().flatten().chain(&alpha).chain([&rho]).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        if !(nu > 0.0 && nu <= 1.0) {
            return Err(Error::InvalidArgument(format!("nu {} outside (0, 1]", nu)));
        }
        let c_bound = 1.0 / (nu * n as f64);
        let mut m = OcsvmModel {
            train_x,
            alpha,
            rho,
            nu,
            kernel,
            c_bound,
            labels: vec![],
            g: vec![],
            system: BorderedSystem::empty(),
        };
        m.refresh_decision_values();
        m.labels = (0..n).map(|i| label_from_alpha(m.alpha[i], c_bound)).collect();
        m.rebuild_system();
        Ok(m)
    }

    pub(crate) fn refresh_decision_values(&mut self) {
        self.g = (0..self.n()).map(|i| self.weighted_sum(&self.train_x[i]) - self.rho).collect();
    }

    /// Recomputes the bordered inverse over the current margin set; leaves the
    /// empty state when the margin system is singular.
    pub(crate) fn rebuild_system(&mut self) {
        let s_order: Vec<usize> = (0..self.n()).filter(|&i| self.labels[i] == SetLabel::Margin).collect();
        self.system = BorderedSystem::from_scratch(self, s_order).unwrap_or_else(|_| BorderedSystem::empty());
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            nu: self.nu,
            kernel: self.kernel.kind,
            sigma: self.kernel.sigma,
            alpha: self.alpha.clone(),
            rho: self.rho,
            train_x: self.train_x.clone(),
        }
    }

    pub fn from_file(f: ModelFile) -> Result<Self> {
        OcsvmModel::from_parts(f.train_x, f.alpha, f.rho, f.nu, KernelSpec { kind: f.kernel, sigma: f.sigma })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        OcsvmModel::from_file(serde_json::from_str(s)?)
    }
}

pub(crate) fn label_from_alpha(alpha: f64, c_bound: f64) -> SetLabel {
    if alpha <= 0.0 {
        SetLabel::Reserve
    } else if alpha >= c_bound {
        SetLabel::Error
    } else {
        SetLabel::Margin
    }
}

/// On-disk model; every float is a hexadecimal string so the round trip is
/// bit-exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(with = "crate::hexfloat")]
    pub nu: f64,
    pub kernel: KernelKind,
    #[serde(with = "crate::hexfloat")]
    pub sigma: f64,
    #[serde(with = "crate::hexfloat::vec")]
    pub alpha: Vec<f64>,
    #[serde(with = "crate::hexfloat")]
    pub rho: f64,
    #[serde(with = "crate::hexfloat::vec2")]
    pub train_x: Vec<Vec<f64>>,
}

/// Stopping threshold on the maximal KKT violation of the dual.
pub const SMO_TOL: f64 = 1e-8;
pub const SMO_MAX_UPDATES: usize = 1_000_000;

/// Solves the dual by maximal-violating-pair coordinate updates.
pub fn train_batch(x: &[Vec<f64>], nu: f64, kernel: KernelSpec) -> Result<OcsvmModel> {
    kernel.validate()?;
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 training vectors, got {}", n)));
    }
    if !(nu > 0.0 && nu < 1.0) {
        return Err(Error::InvalidArgument(format!("nu {} outside (0, 1)", nu)));
    }
    if nu * (n as f64) < 1.0 {
        return Err(Error::NuTooSmall(nu * n as f64));
    }
    let d = x[0].len();
    if x.iter().any(|v| v.len() != d) {
        return Err(Error::ShapeMismatch("training vectors differ in length".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training vectors".into()));
    }
    let c = 1.0 / (nu * n as f64);
    let kmat: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| kernel.eval_unchecked(&x[i], &x[j])).collect()).collect();

    // uniform start is feasible since 1/n <= C and treats exchangeable points alike
    let mut alpha = vec![1.0 / n as f64; n];
    let mut grad: Vec<f64> = (0..n).map(|i| kmat[i].iter().zip(&alpha).map(|(k, a)| k * a).sum()).collect();

    for _ in 0..SMO_MAX_UPDATES {
        // i: may increase (α_i < C) with the smallest gradient
        let mut i_up = usize::MAX;
        let mut g_min = f64::INFINITY;
        for t in 0..n {
            if alpha[t] < c && grad[t] < g_min {
                g_min = grad[t];
                i_up = t;
            }
        }
        let mut g_max = f64::NEG_INFINITY;
        for t in 0..n {
            if alpha[t] > 0.0 && grad[t] > g_max {
                g_max = grad[t];
            }
        }
        if i_up == usize::MAX || g_max - g_min < SMO_TOL {
            break;
        }
        // j: may decrease, chosen by second-order gain
        let mut j_low = usize::MAX;
        let mut best = f64::NEG_INFINITY;
        for t in 0..n {
            if alpha[t] > 0.0 && grad[t] > g_min {
                let diff = grad[t] - g_min;
                let curv = (kmat[i_up][i_up] + kmat[t][t] - 2.0 * kmat[i_up][t]).max(1e-12);
                let gain = diff * diff / curv;
                if gain > best {
                    best = gain;
                    j_low = t;
                }
            }
        }
        let (i, j) = (i_up, j_low);
        let curv = (kmat[i][i] + kmat[j][j] - 2.0 * kmat[i][j]).max(1e-12);
        let room_i = c - alpha[i];
        let room_j = alpha[j];
        let mut delta = (grad[j] - grad[i]) / curv;
        if delta >= room_i.min(room_j) {
            delta = room_i.min(room_j);
            if room_i <= room_j {
                alpha[i] = c;
                alpha[j] -= delta;
                if room_i == room_j {
                    alpha[j] = 0.0;
                }
            } else {
                alpha[i] += delta;
                alpha[j] = 0.0;
            }
        } else {
            alpha[i] += delta;
            alpha[j] -= delta;
        }
        for (t, gt) in grad.iter_mut().enumerate() {
            *gt += delta * (kmat[t][i] - kmat[t][j]);
        }
    }
    let labels: Vec<SetLabel> = alpha.iter().map(|&a| label_from_alpha(a, c)).collect();
    if let Some(polished) = polish(&kmat, &alpha, &labels, c) {
        alpha = polished;
    }
    let grad: Vec<f64> = (0..n).map(|i| kmat[i].iter().zip(&alpha).map(|(k, a)| k * a).sum()).collect();
    let rho = recover_rho(&grad, &labels);
    let mut m = OcsvmModel {
        train_x: x.to_vec(),
        alpha,
        rho,
        nu,
        kernel,
        c_bound: c,
        labels,
        g: grad.iter().map(|g| g - rho).collect(),
        system: BorderedSystem::empty(),
    };
    m.rebuild_system();
    Ok(m)
}

/// Largest violation of the dual optimality conditions for a given `α`.
fn max_violation(kmat: &[Vec<f64>], alpha: &[f64], c: f64) -> f64 {
    let grad: Vec<f64> = kmat.iter().map(|row| row.iter().zip(alpha).map(|(k, a)| k * a).sum()).collect();
    let up = (0..alpha.len()).filter(|&t| alpha[t] < c).map(|t| grad[t]).fold(f64::INFINITY, f64::min);
    let low = (0..alpha.len()).filter(|&t| alpha[t] > 0.0).map(|t| grad[t]).fold(f64::NEG_INFINITY, f64::max);
    (low - up).max(0.0)
}

/// Solves the margin equations exactly for the face SMO converged to, so the
/// returned coefficients carry rounding error only. `None` when the solve
/// leaves the face or does not improve optimality.
fn polish(kmat: &[Vec<f64>], alpha: &[f64], labels: &[SetLabel], c: f64) -> Option<Vec<f64>> {
    let s: Vec<usize> = (0..alpha.len()).filter(|&i| labels[i] == SetLabel::Margin).collect();
    let e: Vec<usize> = (0..alpha.len()).filter(|&i| labels[i] == SetLabel::Error).collect();
    if s.is_empty() {
        return None;
    }
    let dim = s.len() + 1;
    let q = nalgebra::DMatrix::from_fn(dim, dim, |r, col| match (r, col) {
        (0, 0) => 0.0,
        (0, _) | (_, 0) => 1.0,
        _ => kmat[s[r - 1]][s[col - 1]],
    });
    let rhs = nalgebra::DVector::from_fn(dim, |r, _| {
        if r == 0 {
            1.0 - c * e.len() as f64
        } else {
            -c * e.iter().map(|&j| kmat[s[r - 1]][j]).sum::<f64>()
        }
    });
    let sol = q.lu().solve(&rhs)?;
    let mut out = alpha.to_vec();
    for (p, &i) in s.iter().enumerate() {
        let a = sol[p + 1];
        if !(a > 0.0 && a < c) {
            return None;
        }
        out[i] = a;
    }
    (max_violation(kmat, &out, c) <= max_violation(kmat, alpha, c)).then_some(out)
}

/// Mean gradient over margin vectors, or the midpoint of the interval the
/// error and reserve sets leave for ρ.
pub(crate) fn recover_rho(grad: &[f64], labels: &[SetLabel]) -> f64 {
    let margin: Vec<f64> = grad.iter().zip(labels).filter(|(_, l)| **l == SetLabel::Margin).map(|(g, _)| *g).collect();
    if !margin.is_empty() {
        return margin.iter().sum::<f64>() / margin.len() as f64;
    }
    let lower = grad.iter().zip(labels).filter(|(_, l)| **l == SetLabel::Error).map(|(g, _)| *g).fold(f64::NEG_INFINITY, f64::max);
    let upper = grad.iter().zip(labels).filter(|(_, l)| **l == SetLabel::Reserve).map(|(g, _)| *g).fold(f64::INFINITY, f64::min);
    match (lower.is_finite(), upper.is_finite()) {
        (true, true) => 0.5 * (lower + upper),
        (true, false) => lower,
        (false, true) => upper,
        (false, false) => 0.0,
    }
}

pub fn decision_value(m: &OcsvmModel, x: &[f64]) -> Result<f64> {
    if x.len() != m.dim() {
        return Err(Error::ShapeMismatch(format!("vector of length {}, model expects {}", x.len(), m.dim())));
    }
    Ok(m.weighted_sum(x) - m.rho)
}

/// `+1` for `g(x) ≥ 0`, `−1` otherwise.
pub fn classify(m: &OcsvmModel, x: &[f64]) -> Result<i8> {
    Ok(if decision_value(m, x)? >= 0.0 { 1 } else { -1 })
}

/// Partitions indices into margin, error and reserve sets from `α` and
/// freshly computed decision values, failing on the worst KKT violation.
pub fn kkt_partition(m: &OcsvmModel, tol: f64) -> Result<Partition> {
    kkt_partition_excluding(m, tol, None)
}

/// As [`kkt_partition`], skipping row `skip` (a candidate still being
/// inserted is allowed to violate its condition).
pub fn kkt_partition_excluding(m: &OcsvmModel, tol: f64, skip: Option<usize>) -> Result<Partition> {
    let c = m.c_bound;
    let alpha_eps = 1e-12 * c;
    let mut part = Partition::default();
    let mut worst: Option<(f64, usize, f64)> = None;
    for i in 0..m.n() {
        if Some(i) == skip {
            continue;
        }
        let a = m.alpha[i];
        let g = m.weighted_sum(&m.train_x[i]) - m.rho;
        let (violation, label) = if a < -alpha_eps || a > c + alpha_eps {
            (f64::INFINITY, SetLabel::Margin)
        } else if a <= alpha_eps {
            ((-g - tol).max(0.0), SetLabel::Reserve)
        } else if a >= c - alpha_eps {
            ((g - tol).max(0.0), SetLabel::Error)
        } else {
            ((g.abs() - tol).max(0.0), SetLabel::Margin)
        };
        if violation > 0.0 {
            if worst.map_or(true, |(v, _, _)| violation > v) {
                worst = Some((violation, i, g));
            }
            continue;
        }
        match label {
            SetLabel::Margin => part.margin.push(i),
            SetLabel::Error => part.error.push(i),
            SetLabel::Reserve => part.reserve.push(i),
        }
    }
    if let Some((_, index, g)) = worst {
        return Err(Error::KktViolation { index, alpha: m.alpha[index], g });
    }
    Ok(part)
}
