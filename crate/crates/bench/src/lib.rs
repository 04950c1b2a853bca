//! Fixed workloads shared by the benchmarks.

use doseopt_core::criteria::{CriterionSpec, Evaluator};
use doseopt_core::presets::{daily_fits, pooled_fit};
use doseopt_core::pso::SwarmConfig;
use doseopt_core::ModelSpec;

pub fn local_d_evaluator() -> Evaluator {
    Evaluator::new(&ModelSpec::proportional_odds(), &CriterionSpec::d(pooled_fit())).expect("valid preset")
}

pub fn robust_dual_evaluator() -> Evaluator {
    Evaluator::new(&ModelSpec::proportional_odds(), &CriterionSpec::robust_dual(daily_fits(), 0.5)).expect("valid preset")
}

/// A short run, large enough to exercise the parallel update and the polish.
pub fn short_swarm() -> SwarmConfig {
    SwarmConfig { n_particles: 40, iters: 60, n_support: 3, ..SwarmConfig::default() }
}
