use cpsvm_core::advisor::{environmental_probability, knn_score, Action, LocationSnapshot};
use cpsvm_core::ocsvm::decision_value;
use cpsvm_core::pipeline::{
    compute_metrics, process_event, run_stream, train_pipeline, PipelineConfig, PipelineState, UpdatePolicy, Verdict,
};
use cpsvm_core::synth::{generate, DriftSpec, FaultSpec, Label, Locations, SynthData, SynthSpec};
use cpsvm_core::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

const WINDOW: usize = 200;

fn scenario() -> &'static (SynthData, PipelineState) {
    static CELL: OnceLock<(SynthData, PipelineState)> = OnceLock::new();
    CELL.get_or_init(|| {
        let spec = SynthSpec {
            i: 30,
            j: 8,
            k: 360,
            rank: 2,
            seed: 21,
            noise_sigma: 0.2,
            drift: Some(DriftSpec { start_k: 290, mu_shift: 0.5, sigma_scale: 1.0, locations: Locations::All }),
            faults: Some(FaultSpec { times: vec![215, 235, 255, 275], locations: vec![2], mu_shift: 15.0, sigma_scale: 1.0 }),
        };
        let data = generate(&spec).unwrap();
        let window = data.tensor.time_range(0, WINDOW).unwrap();
        let config = PipelineConfig { nu: 0.05, ..PipelineConfig::default() };
        let state = train_pipeline(&window, &config).unwrap();
        (data, state)
    })
}

fn run(policy: UpdatePolicy) -> (PipelineState, Vec<Verdict>) {
    let (data, base) = scenario();
    let mut st = base.clone().with_policy(policy);
    let (v, _) = run_stream(&mut st, &data.tensor).unwrap();
    (st, v)
}

/// Brute force: sort all distances from each row and average the first k.
fn knn_oracle(b: &Matrix, k: usize) -> Vec<f64> {
    (0..b.rows())
        .map(|j| {
            let mut d: Vec<f64> = (0..b.rows())
                .filter(|&o| o != j)
                .map(|o| b.row(j).iter().zip(b.row(o)).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
                .collect();
            d.sort_by(f64::total_cmp);
            d[..k].iter().sum::<f64>() / k as f64
        })
        .collect()
}

fn random_b(seed: u64, j: usize, r: usize) -> Matrix {
    let mut g = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(j, r, |_, _| g.gen_range(-2.0..2.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_scores_match_brute_force(seed in any::<u64>(), j in 2usize..12, r in 1usize..4, k_frac in 0.0f64..1.0) {
        let b = random_b(seed, j, r);
        let k = 1 + ((j - 2) as f64 * k_frac) as usize;
        let got = knn_score(&b, k).unwrap();
        for (g, o) in got.iter().zip(knn_oracle(&b, k)) {
            prop_assert!((g - o).abs() <= 1e-12);
        }
    }

    #[test]
    fn p_env_ignores_location_order(seed in any::<u64>(), j in 3usize..10, gamma in 0.0f64..0.5) {
        let prev = random_b(seed, j, 2);
        let curr = Matrix::from_fn(j, 2, |x, y| prev[(x, y)] + 0.3 * ((x * 7 + y * 3) % 5) as f64 / 5.0);
        let p = environmental_probability(&LocationSnapshot::capture(&prev, 1).unwrap(), &LocationSnapshot::capture(&curr, 1).unwrap(), gamma).unwrap();
        let mut perm: Vec<usize> = (0..j).collect();
        perm.rotate_left(seed as usize % j);
        perm.swap(0, j - 1);
        let shuffle = |m: &Matrix| Matrix::from_fn(j, 2, |x, y| m[(perm[x], y)]);
        let q = environmental_probability(&LocationSnapshot::capture(&shuffle(&prev), 1).unwrap(), &LocationSnapshot::capture(&shuffle(&curr), 1).unwrap(), gamma).unwrap();
        prop_assert_eq!(p, q);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn knn_scores_ignore_rotation_and_translation(seed in any::<u64>(), theta in 0.0f64..6.3, dx in -5.0f64..5.0) {
        let b = random_b(seed, 7, 2);
        let (s, c) = theta.sin_cos();
        let moved = Matrix::from_fn(7, 2, |x, y| {
            let (u, v) = (b[(x, 0)], b[(x, 1)]);
            if y == 0 { c * u - s * v + dx } else { s * u + c * v - dx }
        });
        for (p, q) in knn_score(&b, 2).unwrap().iter().zip(knn_score(&moved, 2).unwrap()) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }
}

#[test]
fn tensor_advised_verdicts_follow_the_advice_rule() {
    let (st, v) = run(UpdatePolicy::TensorAdvised);
    let confidence = st.config.advisor.confidence;
    for x in &v {
        assert!((0.0..=1.0).contains(&x.p_env));
        if x.g_raw >= 0.0 {
            assert_eq!(x.action, Action::Accept, "{:?}", x);
            continue;
        }
        let expect = if x.p_env >= confidence { x.g_raw.abs() } else { x.g_raw };
        assert_eq!(x.g_advised, expect);
        let action = if x.g_advised > 0.0 { Action::UpdateModel } else { Action::ReportAnomaly };
        assert_eq!(x.action, action, "{:?}", x);
    }
    assert_eq!(v.first().unwrap().t, WINDOW);
    assert!(v.windows(2).all(|w| w[1].t == w[0].t + 1));
}

#[test]
fn threshold_policies_use_the_score_threshold() {
    for policy in [UpdatePolicy::Threshold, UpdatePolicy::SelfAdvisedStub] {
        let (st, v) = run(policy);
        for x in &v {
            assert_eq!(x.g_advised, x.g_raw);
            let expect = if x.g_raw >= 0.0 {
                Action::Accept
            } else if x.g_raw >= st.threshold {
                Action::UpdateModel
            } else {
                Action::ReportAnomaly
            };
            assert_eq!(x.action, expect);
        }
    }
}

#[test]
fn frozen_policy_never_changes_the_model() {
    let (_, base) = scenario();
    let (st, v) = run(UpdatePolicy::None);
    assert_eq!(st.model.alpha(), base.model.alpha());
    assert_eq!(st.model.rho().to_bits(), base.model.rho().to_bits());
    assert_eq!(st.model.train_x(), base.model.train_x());
    assert!(v.iter().all(|x| x.action != Action::UpdateModel));
    assert!(v.iter().all(|x| (x.action == Action::Accept) == (x.g_raw >= 0.0)));
}

#[test]
fn reported_events_leave_model_and_snapshot_alone() {
    let (data, base) = scenario();
    let mut st = base.clone();
    let mut reports = 0;
    for t in WINDOW..data.tensor.dims().2 {
        let (alpha, rho, snap) = (st.model.alpha().to_vec(), st.model.rho(), st.snapshot.clone());
        let v = process_event(&mut st, &data.tensor.frontal_slice(t)).unwrap();
        if v.action == Action::ReportAnomaly {
            reports += 1;
            assert_eq!(st.model.alpha(), alpha.as_slice());
            assert_eq!(st.model.rho(), rho);
            assert_eq!(st.snapshot, snap);
        }
    }
    assert!(reports > 0, "scenario produced no reports");
}

#[test]
fn faults_are_reported_and_metrics_agree_with_a_recount() {
    let (data, _) = scenario();
    let (_, v) = run(UpdatePolicy::TensorAdvised);
    let m = compute_metrics(UpdatePolicy::TensorAdvised, &v, &data.labels, 50, vec![]).unwrap();
    let healthy: Vec<&Verdict> = v.iter().filter(|x| data.labels[x.t] != Label::Anomalous).collect();
    let alarms = healthy.iter().filter(|x| x.action == Action::ReportAnomaly).count();
    assert_eq!(m.false_alarm_rate, alarms as f64 / healthy.len() as f64);
    let faults: Vec<&Verdict> = v.iter().filter(|x| data.labels[x.t] == Label::Anomalous).collect();
    assert_eq!(faults.len(), 4);
    let hits = faults.iter().filter(|x| x.action == Action::ReportAnomaly).count();
    assert_eq!(m.detection_rate, Some(hits as f64 / 4.0));
    assert_eq!(m.accepted + m.updated + m.reported, v.len());
    assert_eq!(m.windows.iter().map(|w| w.healthy_events).sum::<usize>(), healthy.len());
}

#[test]
fn training_rows_mostly_accept() {
    let (_, base) = scenario();
    let g = base.model.training_decision_values();
    let accept = g.iter().filter(|v| **v >= 0.0).count() as f64 / g.len() as f64;
    assert!(accept >= 1.0 - base.config.nu - 0.05, "accept rate {}", accept);
}

#[test]
fn bundle_round_trip_rescores_and_continues_identically() {
    let (data, base) = scenario();
    let restored = PipelineState::from_json(&base.to_json().unwrap()).unwrap();
    for (x, g) in base.model.train_x().iter().zip(base.model.training_decision_values()) {
        assert!((decision_value(&restored.model, x).unwrap() - g).abs() <= 1e-9);
    }
    let mut a = base.clone();
    let mut b = restored;
    let (va, _) = run_stream(&mut a, &data.tensor).unwrap();
    let (vb, _) = run_stream(&mut b, &data.tensor).unwrap();
    assert_eq!(va, vb);
}

#[test]
fn exhausted_stream_is_an_error() {
    let (data, _) = scenario();
    let window = data.tensor.time_range(0, 40).unwrap();
    let mut st = train_pipeline(&window, &PipelineConfig { nu: 0.1, calibration_steps: 10, ..PipelineConfig::default() }).unwrap();
    assert_eq!(run_stream(&mut st, &window).unwrap_err().code(), "empty-stream");
    let wrong = cpsvm_core::DenseTensor3::zeros((5, 8, 60));
    assert_eq!(run_stream(&mut st, &wrong).unwrap_err().code(), "shape-mismatch");
}
