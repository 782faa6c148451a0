//! Side-by-side optimizer runs from a shared starting point.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sgd::{sweep_in_place, NesgdConfig, NesgdState, OptimizerKind};
use crate::error::{Error, Result};
use crate::tensor::{rmse, DenseTensor3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub rank: usize,
    /// Total single-slice steps per optimizer.
    pub steps: u64,
    /// RMSE is recorded at step 0 and every `record_every` steps after it.
    pub record_every: u64,
    /// Seeds the initial factors, the sample order and the perturbations.
    pub seed: u64,
    pub config: NesgdConfig,
    pub optimizers: Vec<OptimizerKind>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            rank: 2,
            steps: 6000,
            record_every: 100,
            seed: 0,
            config: NesgdConfig::default(),
            optimizers: OptimizerKind::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchTrace {
    pub optimizer: OptimizerKind,
    /// `(step, rmse)` pairs in step order.
    pub points: Vec<(u64, f64)>,
    /// Step at which the factors blew up; the trace stops there.
    pub diverged_at: Option<u64>,
}

impl BenchTrace {
    pub fn final_rmse(&self) -> f64 {
        self.points.last().map_or(f64::INFINITY, |p| p.1)
    }

    /// First recorded step with RMSE at or below `tau`; `None` if never.
    pub fn steps_to(&self, tau: f64) -> Option<u64> {
        self.points.iter().find(|p| p.1 <= tau).map(|p| p.0)
    }
}

/// Lowest final RMSE among the traces that did not diverge.
pub fn best_final_rmse(traces: &[BenchTrace]) -> f64 {
    traces.iter().filter(|t| t.diverged_at.is_none()).map(BenchTrace::final_rmse).fold(f64::INFINITY, f64::min)
}

/// Runs every requested optimizer on `t` from the same random factors, with
/// the same slice order and the same perturbation seed. Divergence truncates
/// that optimizer's trace instead of failing the run.
pub fn bench_optimizers(t: &DenseTensor3, opts: &BenchOptions) -> Result<Vec<BenchTrace>> {
    let nk = t.dims().2;
    if nk == 0 || opts.rank == 0 {
        return Err(Error::InvalidArgument("bench needs K >= 1 and rank >= 1".into()));
    }
    if opts.record_every == 0 {
        return Err(Error::InvalidArgument("record_every must be >= 1".into()));
    }
    opts.config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let init = super::random_factors(t.dims(), opts.rank, &mut rng);
    let mut order = Vec::with_capacity(opts.steps as usize);
    let mut pass: Vec<usize> = (0..nk).collect();
    while (order.len() as u64) < opts.steps {
        pass.shuffle(&mut rng);
        order.extend_from_slice(&pass);
    }
    order.truncate(opts.steps as usize);
    let initial = rmse(t, &init)?;

    let run = |kind: OptimizerKind| -> Result<BenchTrace> {
        let mut f = init.clone();
        let mut st = NesgdState::new(opts.config.clone(), t.dims(), opts.rank, opts.seed.wrapping_add(0x9e37_79b9))?;
        let mut points = vec![(0, initial)];
        for (s, &k) in order.iter().enumerate() {
            match sweep_in_place(t, &mut f, &mut st, kind, k) {
                Ok(()) => {}
                Err(Error::Diverged { step }) => return Ok(BenchTrace { optimizer: kind, points, diverged_at: Some(step) }),
                Err(e) => return Err(e),
            }
            let step = s as u64 + 1;
            if step % opts.record_every == 0 || step == opts.steps {
                points.push((step, rmse(t, &f)?));
            }
        }
        Ok(BenchTrace { optimizer: kind, points, diverged_at: None })
    };

    if cfg!(target_arch = "wasm32") {
        return opts.optimizers.iter().map(|&kind| run(kind)).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = opts.optimizers.iter().map(|&kind| scope.spawn(move || run(kind))).collect();
        handles.into_iter().map(|h| h.join().expect("optimizer thread panicked")).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::kruskal_reconstruct;

    fn planted(seed: u64) -> DenseTensor3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        kruskal_reconstruct(&super::super::random_factors((8, 5, 40), 2, &mut rng))
    }

    #[test]
    fn zero_steps_records_only_the_start() {
        let t = planted(1);
        let opts = BenchOptions { steps: 0, optimizers: vec![OptimizerKind::Sgd], ..Default::default() };
        let traces = bench_optimizers(&t, &opts).unwrap();
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].points.len(), 1);
        assert_eq!(traces[0].points[0].0, 0);
    }

    #[test]
    fn shared_start_and_repeatable() {
        let t = planted(2);
        let opts = BenchOptions { steps: 200, record_every: 50, ..Default::default() };
        let a = bench_optimizers(&t, &opts).unwrap();
        let b = bench_optimizers(&t, &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|tr| tr.points[0] == a[0].points[0]));
        assert_eq!(a[0].points.iter().map(|p| p.0).collect::<Vec<_>>(), vec![0, 50, 100, 150, 200]);
    }

    #[test]
    fn steps_to_threshold() {
        let tr = BenchTrace { optimizer: OptimizerKind::Sgd, points: vec![(0, 1.0), (10, 0.5), (20, 0.2)], diverged_at: None };
        assert_eq!(tr.steps_to(0.5), Some(10));
        assert_eq!(tr.steps_to(0.1), None);
        assert_eq!(best_final_rmse(&[tr]), 0.2);
    }
}
