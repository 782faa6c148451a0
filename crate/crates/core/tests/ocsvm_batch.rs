use cpsvm_core::ocsvm::{classify, decision_value, kkt_partition, train_batch, KernelSpec, OcsvmModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| vec![rng.gen::<f64>() * 3.0, rng.gen::<f64>() * 3.0]).collect()
}

/// Euclidean projection onto `{0 ≤ a ≤ c, Σa = 1}` by bisection on the shift.
fn project(v: &[f64], c: f64) -> Vec<f64> {
    let mass = |t: f64| v.iter().map(|x| (x - t).clamp(0.0, c)).sum::<f64>();
    let (mut lo, mut hi) = (v.iter().cloned().fold(f64::INFINITY, f64::min) - c - 1.0, v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    v.iter().map(|x| (x - t).clamp(0.0, c)).collect()
}

/// Accelerated projected gradient on the dual; independent of the library solver.
fn fista(k: &[Vec<f64>], c: f64, iters: usize) -> Vec<f64> {
    let n = k.len();
    let lip: f64 = k.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut a = vec![1.0 / n as f64; n];
    let mut y = a.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let grad: Vec<f64> = k.iter().map(|r| r.iter().zip(&y).map(|(p, q)| p * q).sum()).collect();
        let step: Vec<f64> = y.iter().zip(&grad).map(|(yi, gi)| yi - gi / lip).collect();
        let next = project(&step, c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = next.iter().zip(&a).map(|(n1, a0)| n1 + (t - 1.0) / t_next * (n1 - a0)).collect();
        a = next;
        t = t_next;
    }
    a
}

fn objective(k: &[Vec<f64>], a: &[f64]) -> f64 {
    0.5 * k.iter().enumerate().map(|(i, r)| a[i] * r.iter().zip(a).map(|(p, q)| p * q).sum::<f64>()).sum::<f64>()
}

#[test]
fn solver_reaches_the_oracle_optimum() {
    for seed in 0..6 {
        let x = cloud(25, seed);
        let spec = KernelSpec::rbf(0.8).unwrap();
        let nu = 0.2 + 0.1 * seed as f64;
        let m = train_batch(&x, nu, spec).unwrap();
        let k: Vec<Vec<f64>> = x.iter().map(|a| x.iter().map(|b| spec.eval_unchecked(a, b)).collect()).collect();
        let c = 1.0 / (nu * 25.0);
        let oracle = fista(&k, c, 20_000);
        let ours = objective(&k, m.alpha());
        let theirs = objective(&k, &oracle);
        assert!(ours <= theirs + 1e-10, "seed {}: {} vs {}", seed, ours, theirs);
        assert!((ours - theirs).abs() <= 1e-7);
        for (a, b) in m.alpha().iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-3);
        }
    }
}

#[test]
fn linear_kernel_is_supported() {
    let x = cloud(20, 40);
    let m = train_batch(&x, 0.3, KernelSpec::linear()).unwrap();
    kkt_partition(&m, 1e-6).unwrap();
}

#[test]
fn median_heuristic_bandwidth() {
    let x = vec![vec![0.0], vec![1.0], vec![3.0]];
    // pairwise distances 1, 2, 3
    assert_eq!(KernelSpec::rbf_median_heuristic(&x).unwrap().sigma, 2.0);
}

#[test]
fn rejects_bad_inputs() {
    let k = KernelSpec::rbf(1.0).unwrap();
    assert_eq!(train_batch(&cloud(10, 1), 0.0, k).unwrap_err().code(), "invalid-argument");
    assert_eq!(train_batch(&[vec![0.0, 1.0], vec![1.0]], 0.6, k).unwrap_err().code(), "shape-mismatch");
    assert_eq!(train_batch(&[vec![f64::NAN], vec![1.0]], 0.6, k).unwrap_err().code(), "non-finite");
    let m = train_batch(&cloud(10, 1), 0.3, k).unwrap();
    assert_eq!(decision_value(&m, &[1.0]).unwrap_err().code(), "shape-mismatch");
    assert!(OcsvmModel::from_json("{\"nu\": 1}").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, .. ProptestConfig::default() })]

    #[test]
    fn fresh_models_are_feasible_and_optimal(seed in 0u64..100_000, n in 5usize..40, nu in 0.1f64..0.9, sigma in 0.2f64..2.0) {
        let x = cloud(n, seed);
        prop_assume!(nu * n as f64 >= 1.0);
        let m = train_batch(&x, nu, KernelSpec::rbf(sigma).unwrap()).unwrap();
        let c = m.c_bound();
        prop_assert!((m.alpha().iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        prop_assert!(m.alpha().iter().all(|&a| a >= 0.0 && a <= c));
        let part = kkt_partition(&m, 1e-6).unwrap();
        prop_assert_eq!(part.margin.len() + part.error.len() + part.reserve.len(), n);
        // at most ν·n error vectors and at least ν·n support vectors
        prop_assert!(part.error.len() as f64 <= nu * n as f64 + 1e-9);
        prop_assert!((part.error.len() + part.margin.len()) as f64 >= nu * n as f64 - 1e-9);
    }

    #[test]
    fn decision_function_is_lipschitz(seed in 0u64..100_000, sigma in 0.3f64..2.0, a in prop::collection::vec(-1.0f64..4.0, 2), b in prop::collection::vec(-1.0f64..4.0, 2)) {
        let m = train_batch(&cloud(20, seed), 0.3, KernelSpec::rbf(sigma).unwrap()).unwrap();
        let lip = m.alpha().iter().sum::<f64>() / (sigma * std::f64::consts::E.sqrt());
        let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let ga = decision_value(&m, &a).unwrap();
        let gb = decision_value(&m, &b).unwrap();
        prop_assert!((ga - gb).abs() <= lip * d + 1e-12);
        prop_assert_eq!(classify(&m, &a).unwrap(), if ga >= 0.0 { 1 } else { -1 });
    }

    #[test]
    fn serialization_round_trip(seed in 0u64..100_000, sigma in 0.1f64..3.0) {
        let m = train_batch(&cloud(12, seed), 0.4, KernelSpec::rbf(sigma).unwrap()).unwrap();
        let back = OcsvmModel::from_json(&m.to_json().unwrap()).unwrap();
        prop_assert_eq!(back.to_file(), m.to_file());
    }
}
