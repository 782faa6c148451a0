//! Exact incremental insertion of one sample into a trained one-class SVM.
//!
//! Works with `b = −ρ`, so that `g_i = Σ_j α_j K_ij + b`. Keeping `g_i = 0` on
//! the margin set `S` and `Σα` fixed while the candidate coefficient grows
//! gives the linear system `Q [Δb; Δα_S] = −[1; K_Sc] Δα_c` with
//! `Q = [[0, 1ᵀ], [1, K_SS]]`. The inverse of `Q` is maintained by bordered
//! rank-one updates as indices enter and leave `S`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::invert;
use crate::ocsvm::{kkt_partition, recover_rho, OcsvmModel, SetLabel};
use crate::tensor::Matrix;

/// Pivots smaller than this trigger a from-scratch inverse.
pub const PIVOT_EPS: f64 = 1e-12;
/// Increments below this are treated as zero.
pub const STEP_EPS: f64 = 1e-14;
/// Sensitivities below this are treated as zero when deciding eligibility.
pub const SENS_EPS: f64 = 1e-11;
/// Rank-one updates allowed before the inverse is refreshed from scratch.
const REFRESH_AFTER: usize = 64;

/// Inverse of the bordered margin system `[[0, 1ᵀ], [1, K_SS]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BorderedSystem {
    /// Row and column 0 belong to the offset variable.
    pub q_inv: Matrix,
    /// Training indices of rows `1..=|S|` of `q_inv`.
    pub s_order: Vec<usize>,
    updates: usize,
}

impl BorderedSystem {
    /// State for an empty margin set: a 0×0 inverse.
    pub fn empty() -> Self {
        BorderedSystem { q_inv: Matrix::zeros(0, 0), s_order: vec![], updates: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.s_order.is_empty()
    }

    pub fn position(&self, index: usize) -> Option<usize> {
        self.s_order.iter().position(|&s| s == index)
    }

    /// Assembles `Q` for the given margin indices.
    pub fn assemble(m: &OcsvmModel, s_order: &[usize]) -> Matrix {
        let s = s_order.len();
        let x = &m.train_x;
        Matrix::from_fn(s + 1, s + 1, |r, c| match (r, c) {
            (0, 0) => 0.0,
            (0, _) | (_, 0) => 1.0,
            _ => m.kernel.eval_unchecked(&x[s_order[r - 1]], &x[s_order[c - 1]]),
        })
    }

    /// Explicit inverse over `s_order`; fails when the system is singular.
    pub fn from_scratch(m: &OcsvmModel, s_order: Vec<usize>) -> Result<Self> {
        if s_order.is_empty() {
            return Ok(BorderedSystem::empty());
        }
        let q = BorderedSystem::assemble(m, &s_order);
        let q_inv = invert(&q).ok_or(Error::Immobile)?;
        let residual = q.matmul(&q_inv)?.sub(&Matrix::identity(q.rows()))?.max_abs();
        if !(residual <= 1e-8) {
            return Err(Error::Immobile);
        }
        Ok(BorderedSystem { q_inv, s_order, updates: 0 })
    }

    /// Largest entry of `q_inv·Q − I`.
    pub fn residual(&self, m: &OcsvmModel) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let q = BorderedSystem::assemble(m, &self.s_order);
        self.q_inv.matmul(&q).and_then(|p| p.sub(&Matrix::identity(q.rows()))).map_or(f64::INFINITY, |d| d.max_abs())
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.q_inv.rows();
        (0..n).map(|r| self.q_inv.row(r).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    fn border(&self, m: &OcsvmModel, x: &[f64]) -> Vec<f64> {
        let mut u = Vec::with_capacity(self.s_order.len() + 1);
        u.push(1.0);
        u.extend(self.s_order.iter().map(|&s| m.kernel.eval_unchecked(&m.train_x[s], x)));
        u
    }
}

/// Adds training index `new_index` to the margin set.
pub fn q_inverse_expand(sys: &BorderedSystem, m: &OcsvmModel, new_index: usize) -> Result<BorderedSystem> {
    if new_index >= m.n() || sys.position(new_index).is_some() {
        return Err(Error::InvalidArgument(format!("index {} cannot join the margin set", new_index)));
    }
    let x = &m.train_x[new_index];
    let kkk = m.kernel.eval_unchecked(x, x);
    if sys.is_empty() {
        let q_inv = Matrix::from_rows(&[vec![-kkk, 1.0], vec![1.0, 0.0]])?;
        return Ok(BorderedSystem { q_inv, s_order: vec![new_index], updates: 0 });
    }
    let u = sys.border(m, x);
    let beta: Vec<f64> = sys.apply(&u).into_iter().map(|v| -v).collect();
    let pivot = kkk + u.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
    let mut s_order = sys.s_order.clone();
    s_order.push(new_index);
    if pivot.abs() < PIVOT_EPS {
        return BorderedSystem::from_scratch(m, s_order);
    }
    let n = sys.q_inv.rows();
    let mut ext = beta;
    ext.push(1.0);
    let q_inv = Matrix::from_fn(n + 1, n + 1, |r, c| {
        let base = if r < n && c < n { sys.q_inv[(r, c)] } else { 0.0 };
        base + ext[r] * ext[c] / pivot
    });
    let updates = sys.updates + 1;
    if updates >= REFRESH_AFTER {
        return BorderedSystem::from_scratch(m, s_order);
    }
    Ok(BorderedSystem { q_inv, s_order, updates })
}

/// Removes training index `leaving_index` from the margin set.
pub fn q_inverse_shrink(sys: &BorderedSystem, m: &OcsvmModel, leaving_index: usize) -> Result<BorderedSystem> {
    let p = sys
        .position(leaving_index)
        .ok_or_else(|| Error::InvalidArgument(format!("index {} is not in the margin set", leaving_index)))?;
    let mut s_order = sys.s_order.clone();
    s_order.remove(p);
    if s_order.is_empty() {
        return Ok(BorderedSystem::empty());
    }
    let pos = p + 1;
    let pivot = sys.q_inv[(pos, pos)];
    if pivot.abs() < PIVOT_EPS {
        return BorderedSystem::from_scratch(m, s_order);
    }
    let n = sys.q_inv.rows();
    let keep: Vec<usize> = (0..n).filter(|&r| r != pos).collect();
    let q = &sys.q_inv;
    let q_inv = Matrix::from_fn(n - 1, n - 1, |r, c| {
        let (a, b) = (keep[r], keep[c]);
        q[(a, b)] - q[(a, pos)] * q[(pos, b)] / pivot
    });
    let updates = sys.updates + 1;
    if updates >= REFRESH_AFTER {
        return BorderedSystem::from_scratch(m, s_order);
    }
    Ok(BorderedSystem { q_inv, s_order, updates })
}

/// `β = −Q⁻¹ [1; K(x_S, x_c)]`: entry 0 is the sensitivity of the offset
/// `b = −ρ`, the rest those of the margin coefficients, per unit of `α_c`.
pub fn compute_beta(m: &OcsvmModel, sys: &BorderedSystem, x_c: &[f64]) -> Result<Vec<f64>> {
    if sys.is_empty() {
        return Err(Error::EmptyMarginSet);
    }
    if x_c.len() != m.dim() {
        return Err(Error::ShapeMismatch(format!("vector of length {}, model expects {}", x_c.len(), m.dim())));
    }
    Ok(sys.apply(&sys.border(m, x_c)).into_iter().map(|v| -v).collect())
}

/// `γ_i = K(x_i, x_c) + Σ_{j∈S} K_ij β_j + β₀` for every training index.
pub fn compute_gamma(m: &OcsvmModel, sys: &BorderedSystem, beta: &[f64], x_c: &[f64]) -> Vec<f64> {
    sensitivities(m, sys, beta, Some(x_c))
}

/// `Σ_{j∈S} K_ij w_j + w₀ (+ K(x_i, x_c))` for every training index.
fn sensitivities(m: &OcsvmModel, sys: &BorderedSystem, w: &[f64], x_c: Option<&[f64]>) -> Vec<f64> {
    let k = &m.kernel;
    m.train_x
        .iter()
        .map(|xi| {
            let mut v = w[0];
            if let Some(xc) = x_c {
                v += k.eval_unchecked(xi, xc);
            }
            for (p, &s) in sys.s_order.iter().enumerate() {
                v += k.eval_unchecked(xi, &m.train_x[s]) * w[p + 1];
            }
            v
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SetTag {
    S,
    E,
    #[serde(rename = "Rv")]
    R,
    #[serde(rename = "candidate")]
    Candidate,
}

impl From<SetLabel> for SetTag {
    fn from(l: SetLabel) -> Self {
        match l {
            SetLabel::Margin => SetTag::S,
            SetLabel::Error => SetTag::E,
            SetLabel::Reserve => SetTag::R,
        }
    }
}

/// Stage of an insertion that produced an event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Restoring `Σα = 1` over the existing vectors after the bound shrinks.
    Mass,
    /// Growing the candidate coefficient.
    Candidate,
}

/// One change of set membership.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MigrationEvent {
    pub phase: Phase,
    /// 1: S→E, 2: S→Rv, 3: E/Rv→S, 4: candidate→S, 5: candidate→E.
    pub case_id: u8,
    pub index: usize,
    pub from_set: SetTag,
    pub to_set: SetTag,
    /// Step length taken before the migration: `Δα_c` in the candidate
    /// phase, added mass in the mass phase.
    pub delta_alpha_c: f64,
}

fn clamp_step(raw: f64) -> f64 {
    if raw < STEP_EPS {
        0.0
    } else {
        raw
    }
}

/// Picks the smallest admissible step given the margin set sensitivities
/// `beta` (offset first) and the per-index sensitivities `gamma`. Index
/// `candidate`, when present, is the vector whose coefficient is growing.
fn smallest_step(
    m: &OcsvmModel,
    sys: &BorderedSystem,
    beta: &[f64],
    gamma: &[f64],
    candidate: Option<usize>,
    phase: Phase,
) -> Result<MigrationEvent> {
    let c_bound = m.c_bound;
    let mut best: Option<(f64, u8, usize)> = None;
    let mut offer = |delta: f64, case_id: u8, index: usize| {
        let key = (clamp_step(delta), case_id, index);
        if best.map_or(true, |b| (key.0, key.1, key.2) < (b.0, b.1, b.2)) {
            best = Some(key);
        }
    };
    for (p, &i) in sys.s_order.iter().enumerate() {
        let b = beta[p + 1];
        if b > SENS_EPS {
            offer((c_bound - m.alpha[i]) / b, 1, i);
        } else if b < -SENS_EPS {
            offer(-m.alpha[i] / b, 2, i);
        }
    }
    for i in 0..m.n() {
        if Some(i) == candidate {
            continue;
        }
        let gi = gamma[i];
        match m.labels[i] {
            SetLabel::Error if gi > SENS_EPS => offer(-m.g[i] / gi, 3, i),
            SetLabel::Reserve if gi < -SENS_EPS => offer(-m.g[i] / gi, 3, i),
            _ => {}
        }
    }
    if let Some(c) = candidate {
        if gamma[c] > SENS_EPS {
            offer(-m.g[c] / gamma[c], 4, c);
        }
        offer(c_bound - m.alpha[c], 5, c);
    }
    let (delta, case_id, index) = best.ok_or(Error::Immobile)?;
    let (from_set, to_set) = match case_id {
        1 => (SetTag::S, SetTag::E),
        2 => (SetTag::S, SetTag::R),
        3 => (SetTag::from(m.labels[index]), SetTag::S),
        4 => (SetTag::Candidate, SetTag::S),
        _ => (SetTag::Candidate, SetTag::E),
    };
    Ok(MigrationEvent { phase, case_id, index, from_set, to_set, delta_alpha_c: delta })
}

/// Smallest `Δα_c` at which some index changes set, over the five migration
/// cases; ties go to the lowest case, then the lowest index. The candidate
/// must already be stored in the model at index `candidate` with its current
/// coefficient and decision value.
pub fn min_delta_alpha(
    m: &OcsvmModel,
    sys: &BorderedSystem,
    beta: &[f64],
    gamma: &[f64],
    candidate: usize,
) -> Result<MigrationEvent> {
    if candidate >= m.n() || gamma.len() != m.n() || beta.len() != sys.s_order.len() + 1 {
        return Err(Error::ShapeMismatch("sensitivities do not match the model".into()));
    }
    if m.alpha[candidate] >= m.c_bound {
        // no room left for the candidate coefficient
        return Err(Error::Immobile);
    }
    smallest_step(m, sys, beta, gamma, Some(candidate), Phase::Candidate)
}

/// Observer called after every migration with the model state and the index
/// of a candidate whose coefficient is still in transit.
pub type Observer<'a> = dyn FnMut(&OcsvmModel, &MigrationEvent, Option<usize>) + 'a;

/// Inserts `x_c` and returns the updated model with its migration trail.
pub fn add_sample(m: &OcsvmModel, x_c: &[f64]) -> Result<(OcsvmModel, Vec<MigrationEvent>)> {
    add_sample_observed(m, x_c, &mut |_, _, _| {})
}

/// [`add_sample`], falling back to batch training on the enlarged set when
/// the path cannot be followed. The flag reports whether the fallback ran.
pub fn add_sample_or_retrain(m: &OcsvmModel, x_c: &[f64]) -> Result<(OcsvmModel, Vec<MigrationEvent>, bool)> {
    match add_sample(m, x_c) {
        Ok((next, events)) => Ok((next, events, false)),
        Err(e) if e.is_numerical() => {
            let mut x = m.train_x.clone();
            x.push(x_c.to_vec());
            let next = crate::ocsvm::train_batch(&x, m.nu, m.kernel)?;
            Ok((next, vec![], true))
        }
        Err(e) => Err(e),
    }
}

pub fn add_sample_observed(
    m: &OcsvmModel,
    x_c: &[f64],
    observer: &mut Observer<'_>,
) -> Result<(OcsvmModel, Vec<MigrationEvent>)> {
    if x_c.len() != m.dim() {
        return Err(Error::ShapeMismatch(format!("vector of length {}, model expects {}", x_c.len(), m.dim())));
    }
    if x_c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("candidate vector".into()));
    }
    let margin_count = m.labels.iter().filter(|l| **l == SetLabel::Margin).count();
    if margin_count != m.system.s_order.len() {
        // the stored inverse is unusable (singular margin system)
        return Err(Error::Immobile);
    }
    let mut w = m.clone();
    let n = w.n();
    let mut events = Vec::new();

    // The dual is homogeneous: scaling α, ρ by n/(n+1) is optimal for the
    // tighter bound with mass n/(n+1).
    let c_new = 1.0 / (w.nu * (n + 1) as f64);
    let lambda = n as f64 / (n + 1) as f64;
    for i in 0..n {
        w.alpha[i] = match w.labels[i] {
            SetLabel::Error => c_new,
            SetLabel::Reserve => 0.0,
            SetLabel::Margin => w.alpha[i] * lambda,
        };
        w.g[i] *= lambda;
    }
    w.rho *= lambda;
    w.c_bound = c_new;
    restore_mass(&mut w, &mut events, observer)?;

    let g_c = w.weighted_sum(x_c) - w.rho;
    w.train_x.push(x_c.to_vec());
    w.alpha.push(0.0);
    w.g.push(g_c);
    w.labels.push(SetLabel::Reserve);
    if g_c < 0.0 {
        grow_candidate(&mut w, &mut events, observer)?;
    }
    finalize(&mut w)?;
    Ok((w, events))
}

fn cap(m: &OcsvmModel) -> usize {
    20 * m.n() + 100
}

fn migrate(w: &mut OcsvmModel, ev: &MigrationEvent) -> Result<()> {
    let i = ev.index;
    match ev.to_set {
        SetTag::E => {
            if ev.from_set == SetTag::S {
                w.system = q_inverse_shrink(&w.system, w, i)?;
            }
            w.alpha[i] = w.c_bound;
            w.labels[i] = SetLabel::Error;
        }
        SetTag::R => {
            w.system = q_inverse_shrink(&w.system, w, i)?;
            w.alpha[i] = 0.0;
            w.labels[i] = SetLabel::Reserve;
        }
        SetTag::S => {
            w.system = q_inverse_expand(&w.system, w, i)?;
            w.g[i] = 0.0;
            w.labels[i] = SetLabel::Margin;
        }
        SetTag::Candidate => unreachable!("nothing migrates into the candidate slot"),
    }
    Ok(())
}

/// Shifts ρ so that `index` lands on the margin and seeds `S` with it.
fn seed_margin(w: &mut OcsvmModel, index: usize) -> Result<()> {
    let shift = w.g[index];
    w.rho += shift;
    for g in w.g.iter_mut() {
        *g -= shift;
    }
    w.g[index] = 0.0;
    w.labels[index] = SetLabel::Margin;
    w.system = q_inverse_expand(&BorderedSystem::empty(), w, index)?;
    Ok(())
}

fn step_along(w: &mut OcsvmModel, dir: &[f64], sens: &[f64], delta: f64, candidate: Option<usize>) {
    for (p, &s) in w.system.s_order.iter().enumerate() {
        w.alpha[s] += dir[p + 1] * delta;
    }
    w.rho -= dir[0] * delta;
    for (i, g) in w.g.iter_mut().enumerate() {
        if w.labels[i] == SetLabel::Margin && Some(i) != candidate {
            *g = 0.0;
        } else {
            *g += sens[i] * delta;
        }
    }
    if let Some(c) = candidate {
        w.alpha[c] += delta;
    }
}

/// Raises `Σα` back to one over the existing vectors.
fn restore_mass(w: &mut OcsvmModel, events: &mut Vec<MigrationEvent>, observer: &mut Observer<'_>) -> Result<()> {
    let limit = cap(w);
    for _ in 0..limit {
        let remaining = 1.0 - w.alpha.iter().sum::<f64>();
        if remaining <= 1e-15 {
            return Ok(());
        }
        if w.system.is_empty() {
            // only a reserve vector can absorb mass: lower g until one hits the margin
            let seed = (0..w.n())
                .filter(|&i| w.labels[i] == SetLabel::Reserve)
                .min_by(|&a, &b| w.g[a].total_cmp(&w.g[b]))
                .ok_or(Error::Immobile)?;
            seed_margin(w, seed)?;
        }
        let dir: Vec<f64> = (0..w.system.q_inv.rows()).map(|r| w.system.q_inv[(r, 0)]).collect();
        let sens = sensitivities(w, &w.system, &dir, None);
        let mut ev = match smallest_step(w, &w.system, &dir, &sens, None, Phase::Mass) {
            Ok(ev) if ev.delta_alpha_c < remaining => ev,
            _ => {
                step_along(w, &dir, &sens, remaining, None);
                return Ok(());
            }
        };
        step_along(w, &dir, &sens, ev.delta_alpha_c, None);
        ev.phase = Phase::Mass;
        migrate(w, &ev)?;
        events.push(ev);
        observer(w, &ev, None);
    }
    Err(Error::Immobile)
}

/// Grows the coefficient of the last vector until it satisfies its KKT row.
fn grow_candidate(w: &mut OcsvmModel, events: &mut Vec<MigrationEvent>, observer: &mut Observer<'_>) -> Result<()> {
    let c = w.n() - 1;
    let x_c = w.train_x[c].clone();
    let limit = cap(w);
    for _ in 0..limit {
        if w.system.is_empty() {
            // Only ρ can move: raise every g until the candidate or an error
            // vector reaches the margin, whichever comes first.
            let seed = (0..c)
                .filter(|&i| w.labels[i] == SetLabel::Error)
                .max_by(|&a, &b| w.g[a].total_cmp(&w.g[b]).then(b.cmp(&a)));
            match seed {
                Some(e) if w.g[e] > w.g[c] => seed_margin(w, e)?,
                _ => {
                    let shift = w.g[c];
                    w.rho += shift;
                    for g in w.g.iter_mut() {
                        *g -= shift;
                    }
                    w.g[c] = 0.0;
                    if w.alpha[c] == 0.0 {
                        return Ok(());
                    }
                    let ev = MigrationEvent {
                        phase: Phase::Candidate,
                        case_id: 4,
                        index: c,
                        from_set: SetTag::Candidate,
                        to_set: SetTag::S,
                        delta_alpha_c: 0.0,
                    };
                    migrate(w, &ev)?;
                    events.push(ev);
                    observer(w, &ev, None);
                    return Ok(());
                }
            }
        }
        let beta = compute_beta(w, &w.system, &x_c)?;
        let gamma = compute_gamma(w, &w.system, &beta, &x_c);
        let ev = min_delta_alpha(w, &w.system, &beta, &gamma, c)?;
        step_along(w, &beta, &gamma, ev.delta_alpha_c, Some(c));
        events.push(ev);
        match ev.case_id {
            4 => {
                migrate(w, &ev)?;
                observer(w, &ev, None);
                return Ok(());
            }
            5 => {
                w.alpha[c] = w.c_bound;
                w.labels[c] = SetLabel::Error;
                observer(w, &ev, None);
                return Ok(());
            }
            _ => {
                migrate(w, &ev)?;
                observer(w, &ev, Some(c));
            }
        }
    }
    Err(Error::Immobile)
}

/// Re-derives cached quantities from `α` and checks optimality.
fn finalize(w: &mut OcsvmModel) -> Result<()> {
    let grad: Vec<f64> = (0..w.n()).map(|i| w.weighted_sum(&w.train_x[i])).collect();
    w.rho = recover_rho(&grad, &w.labels);
    w.g = grad.iter().map(|g| g - w.rho).collect();
    if w.system.updates > 0 && w.system.residual(w) > 1e-9 {
        w.system = BorderedSystem::from_scratch(w, w.system.s_order.clone())?;
    }
    kkt_partition(w, 1e-6)?;
    Ok(())
}

/// Writes one JSON object per event.
pub fn write_audit_log<W: Write>(events: &[MigrationEvent], mut out: W) -> Result<()> {
    for ev in events {
        serde_json::to_writer(&mut out, ev)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_audit_log<R: BufRead>(input: R) -> Result<Vec<MigrationEvent>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
