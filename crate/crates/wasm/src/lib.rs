//! Browser bindings for the static demo page in `www/`.
//!
//! Three interactive pieces: a one-class boundary grown one click at a time,
//! an optimizer comparison on a small synthetic tensor, and the drift stream
//! replayed under a chosen update policy.

use cpsvm_core::advisor::Action;
use cpsvm_core::decomp::{best_final_rmse, bench_optimizers, BenchOptions};
use cpsvm_core::incremental::add_sample_or_retrain;
use cpsvm_core::ocsvm::{decision_value, train_batch, KernelSpec, OcsvmModel, SetLabel};
use cpsvm_core::pipeline::{compute_metrics, run_stream, train_pipeline, PipelineConfig, UpdatePolicy};
use cpsvm_core::synth::{generate, SynthSpec};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js(e: cpsvm_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(|e| JsError::new(&e.to_string()))
}

/// A one-class model on points in the unit square.
#[wasm_bindgen]
pub struct Boundary {
    nu: f64,
    kernel: KernelSpec,
    pending: Vec<Vec<f64>>,
    model: Option<OcsvmModel>,
}

#[derive(Serialize)]
struct AddReport {
    n: usize,
    events: usize,
    retrained: bool,
    trained: bool,
}

#[wasm_bindgen]
impl Boundary {
    #[wasm_bindgen(constructor)]
    pub fn new(nu: f64, sigma: f64) -> Result<Boundary, JsError> {
        if !(nu > 0.0 && nu < 1.0) {
            return Err(JsError::new("nu must lie in (0, 1)"));
        }
        Ok(Boundary { nu, kernel: KernelSpec::rbf(sigma).map_err(js)?, pending: vec![], model: None })
    }

    /// Adds a point. The first batch fit happens once `nu * n >= 1`; after that
    /// each point is inserted incrementally.
    pub fn add_point(&mut self, x: f64, y: f64) -> Result<String, JsError> {
        let p = vec![x, y];
        let report = match self.model.take() {
            Some(m) => {
                let (next, events, retrained) = add_sample_or_retrain(&m, &p).map_err(js)?;
                let n = next.n();
                self.model = Some(next);
                AddReport { n, events: events.len(), retrained, trained: false }
            }
            None => {
                self.pending.push(p);
                let n = self.pending.len();
                let ready = n >= 2 && self.nu * n as f64 >= 1.0;
                if ready {
                    self.model = Some(train_batch(&self.pending, self.nu, self.kernel).map_err(js)?);
                }
                AddReport { n, events: 0, retrained: false, trained: ready }
            }
        };
        to_json(&report)
    }

    pub fn point_count(&self) -> usize {
        self.model.as_ref().map_or(self.pending.len(), |m| m.n())
    }

    /// Flat `[x0, y0, x1, y1, ...]` of the stored points.
    pub fn points(&self) -> Vec<f64> {
        match &self.model {
            Some(m) => m.train_x().iter().flatten().copied().collect(),
            None => self.pending.iter().flatten().copied().collect(),
        }
    }

    /// Per point: 0 reserve, 1 margin, 2 error, 3 not yet trained.
    pub fn point_sets(&self) -> Vec<u8> {
        match &self.model {
            Some(m) => m
                .labels()
                .iter()
                .map(|l| match l {
                    SetLabel::Reserve => 0,
                    SetLabel::Margin => 1,
                    SetLabel::Error => 2,
                })
                .collect(),
            None => vec![3; self.pending.len()],
        }
    }

    /// Decision values on a `res × res` grid over the unit square, row by row
    /// from the top. Empty before the first fit.
    pub fn grid(&self, res: usize) -> Result<Vec<f64>, JsError> {
        let Some(m) = &self.model else { return Ok(vec![]) };
        let step = 1.0 / (res.max(2) - 1) as f64;
        let mut out = Vec::with_capacity(res * res);
        for r in 0..res {
            for c in 0..res {
                out.push(decision_value(m, &[c as f64 * step, 1.0 - r as f64 * step]).map_err(js)?);
            }
        }
        Ok(out)
    }

    pub fn rho(&self) -> f64 {
        self.model.as_ref().map_or(f64::NAN, |m| m.rho())
    }
}

#[derive(Serialize)]
struct Curves {
    tau: f64,
    traces: Vec<Curve>,
}

#[derive(Serialize)]
struct Curve {
    optimizer: &'static str,
    steps: Vec<u64>,
    rmse: Vec<f64>,
    steps_to_tau: Option<u64>,
    diverged_at: Option<u64>,
}

/// RMSE curves of SGD, PSGD and NESGD on a seeded `i × j × k` tensor.
#[wasm_bindgen]
pub fn optimizer_curves(i: usize, j: usize, k: usize, steps: u32, seed: u32, noise: f64) -> Result<String, JsError> {
    let data = generate(&SynthSpec { i, j, k, rank: 2, seed: seed as u64, noise_sigma: noise, drift: None, faults: None })
        .map_err(js)?;
    let opts = BenchOptions { steps: steps as u64, record_every: (steps as u64 / 60).max(1), seed: seed as u64, ..BenchOptions::default() };
    let traces = bench_optimizers(&data.tensor, &opts).map_err(js)?;
    let tau = 1.1 * best_final_rmse(&traces);
    let traces = traces
        .iter()
        .map(|t| Curve {
            optimizer: t.optimizer.name(),
            steps: t.points.iter().map(|p| p.0).collect(),
            rmse: t.points.iter().map(|p| p.1).collect(),
            steps_to_tau: t.steps_to(tau),
            diverged_at: t.diverged_at,
        })
        .collect();
    to_json(&Curves { tau, traces })
}

#[derive(Serialize)]
struct StreamView {
    t: Vec<usize>,
    g_raw: Vec<f64>,
    p_env: Vec<f64>,
    action: Vec<&'static str>,
    label: Vec<&'static str>,
    false_alarm_windows: Vec<f64>,
    detection_rate: Option<f64>,
    false_alarm_rate_after_drift: Option<f64>,
}

/// Replays the drift scenario (500 training slices, local faults, then a
/// global shift) under `policy`.
#[wasm_bindgen]
pub fn drift_stream(seed: u32, policy: &str, drift_mu_shift: f64, gamma_multiplier: f64) -> Result<String, JsError> {
    let policy: UpdatePolicy = policy.parse().map_err(js)?;
    let mut spec = SynthSpec::drift_scenario(seed as u64);
    if let Some(d) = spec.drift.as_mut() {
        d.mu_shift = drift_mu_shift;
    }
    let data = generate(&spec).map_err(js)?;
    let window = data.tensor.time_range(0, 500).map_err(js)?;
    let mut cfg = PipelineConfig::default();
    cfg.advisor.update_policy = policy;
    cfg.advisor.gamma_multiplier = gamma_multiplier;
    let mut state = train_pipeline(&window, &cfg).map_err(js)?;
    let (verdicts, trace) = run_stream(&mut state, &data.tensor).map_err(js)?;
    let metrics = compute_metrics(policy, &verdicts, &data.labels, 100, trace).map_err(js)?;
    let view = StreamView {
        t: verdicts.iter().map(|v| v.t).collect(),
        g_raw: verdicts.iter().map(|v| v.g_raw).collect(),
        p_env: verdicts.iter().map(|v| v.p_env).collect(),
        action: verdicts
            .iter()
            .map(|v| match v.action {
                Action::Accept => "accept",
                Action::UpdateModel => "update",
                Action::ReportAnomaly => "report",
            })
            .collect(),
        label: verdicts.iter().map(|v| data.labels[v.t].as_str()).collect(),
        false_alarm_windows: metrics.windows.iter().map(|w| w.false_alarm_rate).collect(),
        detection_rate: metrics.detection_rate,
        false_alarm_rate_after_drift: metrics.false_alarm_rate_after_drift,
    };
    to_json(&view)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_trains_then_grows() {
        let mut b = Boundary::new(0.3, 0.3).unwrap();
        let pts = [(0.2, 0.2), (0.3, 0.25), (0.25, 0.3), (0.7, 0.7), (0.5, 0.5)];
        for (x, y) in pts {
            b.add_point(x, y).unwrap();
        }
        assert_eq!(b.point_count(), 5);
        assert_eq!(b.points().len(), 10);
        assert!(b.point_sets().iter().all(|s| *s <= 2));
        let g = b.grid(8).unwrap();
        assert_eq!(g.len(), 64);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn curves_cover_all_optimizers() {
        let s = optimizer_curves(8, 5, 40, 120, 1, 0.01).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["traces"].as_array().unwrap().len(), 3);
    }
}
