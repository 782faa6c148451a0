//! Per-event orchestration: absorb a slice into the streaming decomposition,
//! score its temporal row, and accept, learn from, or report it.

use serde::{Deserialize, Serialize};

use crate::advisor::{
    advised_decision, baseline_threshold_policy, environmental_probability, Action, LocationSnapshot,
};
use crate::decomp::{decompose_stream_init, update_online, StreamDecomposition, StreamOptions};
use crate::error::{Error, Result};
use crate::incremental::add_sample_or_retrain;
use crate::ocsvm::{decision_value, train_batch, KernelSpec, ModelFile, OcsvmModel};
use crate::synth::Label;
use crate::tensor::{DenseTensor3, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UpdatePolicy {
    TensorAdvised,
    Threshold,
    /// Placeholder for a self-advised scheme; behaves as `Threshold`.
    SelfAdvisedStub,
    None,
}

impl UpdatePolicy {
    pub const ALL: [UpdatePolicy; 4] =
        [UpdatePolicy::TensorAdvised, UpdatePolicy::Threshold, UpdatePolicy::SelfAdvisedStub, UpdatePolicy::None];

    pub fn name(self) -> &'static str {
        match self {
            UpdatePolicy::TensorAdvised => "TENSOR_ADVISED",
            UpdatePolicy::Threshold => "THRESHOLD",
            UpdatePolicy::SelfAdvisedStub => "SELF_ADVISED_STUB",
            UpdatePolicy::None => "NONE",
        }
    }
}

impl std::str::FromStr for UpdatePolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        UpdatePolicy::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s) || p.name().replace('_', "-").eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown policy {:?}", s)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvisorConfig {
    pub k_neighbors: usize,
    /// Acceptable knn-score change; calibrated on the training window when absent.
    pub gamma_change: Option<f64>,
    /// Calibrated threshold as a multiple of the median per-step change.
    pub gamma_multiplier: f64,
    pub confidence: f64,
    pub update_policy: UpdatePolicy,
    /// Score below which the threshold policy reports an anomaly; defaults to
    /// the lowest training score.
    pub threshold: Option<f64>,
}

impl Default for AdvisorConfig {
    fn default() -> Self {
        AdvisorConfig {
            k_neighbors: 3,
            gamma_change: None,
            gamma_multiplier: 3.0,
            confidence: 0.9,
            update_policy: UpdatePolicy::TensorAdvised,
            threshold: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub rank: usize,
    pub nu: f64,
    /// RBF with the median-distance bandwidth when absent.
    pub kernel: Option<KernelSpec>,
    pub stream: StreamOptions,
    pub advisor: AdvisorConfig,
    /// Trailing training slices replayed to calibrate the change threshold.
    pub calibration_steps: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            rank: 2,
            nu: 0.02,
            kernel: None,
            stream: StreamOptions::default(),
            advisor: AdvisorConfig::default(),
            calibration_steps: 100,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.advisor;
        if a.k_neighbors == 0 {
            return Err(Error::InvalidArgument("k_neighbors must be >= 1".into()));
        }
        if !(a.confidence > 0.0 && a.confidence <= 1.0) {
            return Err(Error::InvalidArgument(format!("confidence {} outside (0, 1]", a.confidence)));
        }
        if !(a.gamma_multiplier > 0.0 && a.gamma_multiplier.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma_multiplier {} must be > 0", a.gamma_multiplier)));
        }
        if let Some(g) = a.gamma_change {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::InvalidArgument(format!("gamma_change {} must be > 0", g)));
            }
        }
        if let Some(t) = a.threshold {
            if !(t <= 0.0) {
                return Err(Error::InvalidArgument(format!("threshold {} must be <= 0", t)));
            }
        }
        self.stream.config.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub t: usize,
    pub g_raw: f64,
    pub p_env: f64,
    pub g_advised: f64,
    pub action: Action,
}

/// Everything needed to keep scoring a stream.
#[derive(Clone, Debug)]
pub struct PipelineState {
    pub config: PipelineConfig,
    pub decomp: StreamDecomposition,
    pub model: OcsvmModel,
    pub snapshot: LocationSnapshot,
    /// Resolved change threshold.
    pub gamma_change: f64,
    /// Resolved score threshold for the threshold policy.
    pub threshold: f64,
    /// Time index of the next slice.
    pub t: usize,
    /// Insertions that fell back to batch retraining.
    pub retrains: usize,
    /// Fit RMSE of the most recent slice against the updated factors.
    pub last_slice_rmse: f64,
}

/// Decomposes the training window, fits the one-class model on its temporal
/// rows and calibrates the advisor.
pub fn train_pipeline(window: &DenseTensor3, config: &PipelineConfig) -> Result<PipelineState> {
    config.validate()?;
    let (_, nj, nk) = window.dims();
    if config.advisor.k_neighbors >= nj {
        return Err(Error::InvalidArgument(format!("k_neighbors {} must be below J = {}", config.advisor.k_neighbors, nj)));
    }
    let decomp = decompose_stream_init(window, config.rank, &config.stream)?;
    let rows = decomp.factors.c.to_rows();
    let kernel = match config.kernel {
        Some(k) => k,
        None => KernelSpec::rbf_median_heuristic(&rows)?,
    };
    let model = train_batch(&rows, config.nu, kernel)?;
    let k = config.advisor.k_neighbors;
    let snapshot = LocationSnapshot::capture(&decomp.factors.b, k)?;
    let gamma_change = match config.advisor.gamma_change {
        Some(g) => g,
        None => config.advisor.gamma_multiplier * median_knn_change(&decomp, window, config.calibration_steps, k)?,
    };
    let threshold = match config.advisor.threshold {
        Some(t) => t,
        None => model.training_decision_values().iter().cloned().fold(0.0, f64::min),
    };
    Ok(PipelineState {
        config: config.clone(),
        decomp,
        model,
        snapshot,
        gamma_change,
        threshold,
        t: nk,
        retrains: 0,
        last_slice_rmse: 0.0,
    })
}

/// Median per-step knn-score change while replaying the trailing training
/// slices as if they were arriving online.
fn median_knn_change(decomp: &StreamDecomposition, window: &DenseTensor3, steps: usize, k: usize) -> Result<f64> {
    let nk = window.dims().2;
    let steps = steps.clamp(1, nk);
    let mut probe = decomp.clone();
    let mut prev = crate::advisor::knn_score(&probe.factors.b, k)?;
    let mut changes = Vec::with_capacity(steps * prev.len());
    for t in nk - steps..nk {
        update_online(&mut probe, &window.frontal_slice(t))?;
        let curr = crate::advisor::knn_score(&probe.factors.b, k)?;
        changes.extend(curr.iter().zip(&prev).map(|(c, p)| (c - p).abs()));
        prev = curr;
    }
    changes.sort_by(|a, b| a.total_cmp(b));
    let median = changes[changes.len() / 2];
    Ok(median.max(f64::MIN_POSITIVE))
}

fn slice_rmse(decomp: &StreamDecomposition, slice: &Matrix, c: &[f64]) -> f64 {
    let model = decomp.factors.slice_model(c);
    let n = (slice.rows() * slice.cols()) as f64;
    (slice.sub(&model).map(|d| d.frobenius()).unwrap_or(f64::NAN).powi(2) / n).sqrt()
}

/// Processes one incoming slice. The decomposition always absorbs the slice;
/// a reported anomaly leaves the one-class model and the location snapshot
/// untouched.
pub fn process_event(state: &mut PipelineState, slice: &Matrix) -> Result<Verdict> {
    let c_new = update_online(&mut state.decomp, slice)?;
    state.last_slice_rmse = slice_rmse(&state.decomp, slice, &c_new);
    let g_raw = decision_value(&state.model, &c_new)?;
    let curr = LocationSnapshot::capture(&state.decomp.factors.b, state.config.advisor.k_neighbors)?;
    let p_env = environmental_probability(&state.snapshot, &curr, state.gamma_change)?;
    let confidence = state.config.advisor.confidence;
    let (g_advised, action) = match state.config.advisor.update_policy {
        _ if g_raw >= 0.0 => (g_raw, Action::Accept),
        UpdatePolicy::TensorAdvised => {
            let g = advised_decision(g_raw, p_env, confidence);
            (g, if g > 0.0 { Action::UpdateModel } else { Action::ReportAnomaly })
        }
        UpdatePolicy::Threshold | UpdatePolicy::SelfAdvisedStub => (g_raw, baseline_threshold_policy(g_raw, state.threshold)),
        UpdatePolicy::None => (g_raw, Action::ReportAnomaly),
    };
    match action {
        Action::Accept => state.snapshot = curr,
        Action::UpdateModel => {
            let (next, _, retrained) = add_sample_or_retrain(&state.model, &c_new)?;
            state.model = next;
            state.retrains += retrained as usize;
            state.snapshot = curr;
        }
        Action::ReportAnomaly => {}
    }
    let verdict = Verdict { t: state.t, g_raw, p_env, g_advised, action };
    state.t += 1;
    Ok(verdict)
}

/// Serializable pipeline bundle.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineBundle {
    pub config: PipelineConfig,
    pub decomp: StreamDecomposition,
    pub model: ModelFile,
    pub snapshot: LocationSnapshot,
    pub gamma_change: f64,
    pub threshold: f64,
    pub t: usize,
}

impl PipelineState {
    pub fn to_bundle(&self) -> PipelineBundle {
        PipelineBundle {
            config: self.config.clone(),
            decomp: self.decomp.clone(),
            model: self.model.to_file(),
            snapshot: self.snapshot.clone(),
            gamma_change: self.gamma_change,
            threshold: self.threshold,
            t: self.t,
        }
    }

    pub fn from_bundle(b: PipelineBundle) -> Result<Self> {
        b.config.validate()?;
        Ok(PipelineState {
            config: b.config,
            decomp: b.decomp,
            model: OcsvmModel::from_file(b.model)?,
            snapshot: b.snapshot,
            gamma_change: b.gamma_change,
            threshold: b.threshold,
            t: b.t,
            retrains: 0,
            last_slice_rmse: 0.0,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_bundle())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        PipelineState::from_bundle(serde_json::from_str(s)?)
    }

    /// Overrides the update policy, e.g. to replay a bundle under a baseline.
    pub fn with_policy(mut self, policy: UpdatePolicy) -> Self {
        self.config.advisor.update_policy = policy;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub start_t: usize,
    pub end_t: usize,
    pub healthy_events: usize,
    pub false_alarms: usize,
    pub false_alarm_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub policy: UpdatePolicy,
    pub events: usize,
    pub accepted: usize,
    pub updated: usize,
    pub reported: usize,
    pub window_size: usize,
    pub windows: Vec<WindowMetrics>,
    /// Reports among all ground-truth-healthy events.
    pub false_alarm_rate: f64,
    /// Reports among healthy events from the first drifted slice on.
    pub false_alarm_rate_after_drift: Option<f64>,
    /// Reports among ground-truth-anomalous events.
    pub detection_rate: Option<f64>,
    pub rmse_trace: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub runtime_ms: Option<u64>,
}

fn rate(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores verdicts against ground-truth labels indexed by time.
pub fn compute_metrics(
    policy: UpdatePolicy,
    verdicts: &[Verdict],
    labels: &[Label],
    window_size: usize,
    rmse_trace: Vec<f64>,
) -> Result<RunMetrics> {
    if window_size == 0 {
        return Err(Error::InvalidArgument("window size must be >= 1".into()));
    }
    let label_of = |v: &Verdict| {
        labels.get(v.t).copied().ok_or_else(|| Error::ShapeMismatch(format!("no label for time {}", v.t)))
    };
    let mut windows = Vec::new();
    for chunk in verdicts.chunks(window_size) {
        let mut healthy = 0;
        let mut alarms = 0;
        for v in chunk {
            if label_of(v)?.is_healthy() {
                healthy += 1;
                alarms += (v.action == Action::ReportAnomaly) as usize;
            }
        }
        windows.push(WindowMetrics {
            start_t: chunk[0].t,
            end_t: chunk[chunk.len() - 1].t,
            healthy_events: healthy,
            false_alarms: alarms,
            false_alarm_rate: rate(alarms, healthy),
        });
    }
    let count = |pred: &dyn Fn(&Verdict, Label) -> bool| -> Result<usize> {
        let mut n = 0;
        for v in verdicts {
            n += pred(v, label_of(v)?) as usize;
        }
        Ok(n)
    };
    let reported = |v: &Verdict| v.action == Action::ReportAnomaly;
    let healthy = count(&|_, l| l.is_healthy())?;
    let alarms = count(&|v, l| l.is_healthy() && reported(v))?;
    let anomalous = count(&|_, l| l == Label::Anomalous)?;
    let detected = count(&|v, l| l == Label::Anomalous && reported(v))?;
    let onset = labels.iter().position(|l| *l == Label::DriftedHealthy);
    let after = match onset {
        Some(t0) => {
            let h = count(&|v, l| v.t >= t0 && l.is_healthy())?;
            let a = count(&|v, l| v.t >= t0 && l.is_healthy() && reported(v))?;
            (h > 0).then(|| rate(a, h))
        }
        None => None,
    };
    let by_action = |a: Action| verdicts.iter().filter(|v| v.action == a).count();
    Ok(RunMetrics {
        policy,
        events: verdicts.len(),
        accepted: by_action(Action::Accept),
        updated: by_action(Action::UpdateModel),
        reported: by_action(Action::ReportAnomaly),
        window_size,
        windows,
        false_alarm_rate: rate(alarms, healthy),
        false_alarm_rate_after_drift: after,
        detection_rate: (anomalous > 0).then(|| rate(detected, anomalous)),
        rmse_trace,
        runtime_ms: None,
    })
}

/// Runs every slice of `stream` from `state.t` on, returning the verdicts.
pub fn run_stream(state: &mut PipelineState, stream: &DenseTensor3) -> Result<(Vec<Verdict>, Vec<f64>)> {
    let nk = stream.dims().2;
    if state.t >= nk {
        return Err(Error::EmptyStream);
    }
    let (ni, nj, _) = state.decomp.dims();
    if (stream.dims().0, stream.dims().1) != (ni, nj) {
        return Err(Error::ShapeMismatch(format!("stream {:?} against a model for {}×{} slices", stream.dims(), ni, nj)));
    }
    let mut verdicts = Vec::with_capacity(nk - state.t);
    let mut trace = Vec::with_capacity(nk - state.t);
    while state.t < nk {
        let slice = stream.frontal_slice(state.t);
        verdicts.push(process_event(state, &slice)?);
        trace.push(state.last_slice_rmse);
    }
    Ok((verdicts, trace))
}
