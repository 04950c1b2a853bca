//! Two-stage Monte Carlo harness: pilot data on a stage-one design, MLE, locally optimal
//! stage-two design under the estimate, and evaluation of the combined design under the truth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{fit_bp_mle, BpCounts};
use super::{bp_design, joint_probs, penalized_criterion, BpCriterion, BpParams, BpTargets};
use crate::design::Design;
use crate::error::{Error, Result};
use crate::pso::SwarmConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub truth: BpParams,
    pub targets: BpTargets,
    pub criterion: BpCriterion,
    pub stage1: Design,
    /// Share of the observations spent on stage one, in `(0, 1]`.
    #[serde(default = "half")]
    pub alpha: f64,
    #[serde(default = "default_n_total")]
    pub n_total: u64,
    #[serde(default = "default_n_reps")]
    pub n_reps: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "reference_swarm")]
    pub swarm: SwarmConfig,
}

fn half() -> f64 {
    0.5
}

fn default_n_total() -> u64 {
    400
}

fn default_n_reps() -> usize {
    100
}

fn default_seed() -> u64 {
    2024
}

/// Small swarm on `[0, 1.5]` used for every stage-two search.
fn reference_swarm() -> SwarmConfig {
    SwarmConfig { n_particles: 30, n_support: 4, iters: 80, dose_box: super::default_bp_box(), ..SwarmConfig::default() }
}

impl SimConfig {
    /// Defaults for the reference scenario: uniform stage one, `alpha = 0.5`, 400 subjects,
    /// 100 replicates and a small swarm on `[0, 1.5]`.
    pub fn reference(truth: BpParams, targets: BpTargets, stage1: Design, criterion: BpCriterion) -> Self {
        Self {
            truth,
            targets,
            criterion,
            stage1,
            alpha: half(),
            n_total: default_n_total(),
            n_reps: default_n_reps(),
            seed: default_seed(),
            swarm: reference_swarm(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.truth.validate()?;
        self.targets.validate()?;
        self.stage1.validate()?;
        self.swarm.validate()?;
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha = {} must lie in (0, 1]", self.alpha)));
        }
        if self.n_reps == 0 {
            return Err(Error::invalid("n_reps must be positive"));
        }
        let n1 = (self.alpha * self.n_total as f64).round();
        if n1 < 80.0 {
            return Err(Error::invalid(format!(
                "stage one has {n1} observations; at least 80 (20 per parameter) are required"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub index: usize,
    pub theta_hat: Option<[f64; 4]>,
    pub stage2: Option<Design>,
    /// Criterion values of the combined design under the truth.
    pub d_value: Option<f64>,
    pub l_value: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub replicates: Vec<Replicate>,
    pub n_failed: usize,
    pub mean_d: f64,
    pub mean_l: f64,
    /// Stage-one design alone, under the truth.
    pub one_stage_d: f64,
    pub one_stage_l: f64,
}

fn draw_cells(params: &BpParams, x: f64, n: u64, rng: &mut ChaCha8Rng) -> [u64; 4] {
    let p = joint_probs(params, x);
    let mut out = [0u64; 4];
    let mut left = n;
    let mut rest = 1.0;
    for c in 0..3 {
        if left == 0 {
            break;
        }
        let q = if rest > 0.0 { (p[c] / rest).clamp(0.0, 1.0) } else { 0.0 };
        let k = Binomial::new(left, q).map(|b| b.sample(rng)).unwrap_or(0);
        out[c] = k;
        left -= k;
        rest -= p[c];
    }
    out[3] = left;
    out
}

fn simulate(params: &BpParams, alloc: &[(f64, u64)], rng: &mut ChaCha8Rng) -> Vec<BpCounts> {
    alloc
        .iter()
        .filter(|(_, n)| *n > 0)
        .map(|&(x, n)| BpCounts { x, counts: draw_cells(params, x, n, rng) })
        .collect()
}

fn run_replicate(cfg: &SimConfig, index: usize) -> Replicate {
    let mut rep = Replicate { index, theta_hat: None, stage2: None, d_value: None, l_value: None, failure: None };
    let evaluate = |design: &Design, rep: &mut Replicate| {
        let d = penalized_criterion(design, &cfg.truth, &cfg.targets, BpCriterion::D);
        let l = penalized_criterion(design, &cfg.truth, &cfg.targets, BpCriterion::L);
        match (d, l) {
            (Ok(d), Ok(l)) => {
                rep.d_value = Some(d);
                rep.l_value = Some(l);
            }
            (Err(e), _) | (_, Err(e)) => rep.failure = Some(e.to_string()),
        }
    };
    if cfg.alpha >= 1.0 {
        evaluate(&cfg.stage1, &mut rep);
        return rep;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let n1 = (cfg.alpha * cfg.n_total as f64).round() as u64;
    let data = simulate(&cfg.truth, &cfg.stage1.allocate(n1), &mut rng);
    let fit = match fit_bp_mle(&data, &cfg.truth) {
        Ok(f) => f,
        Err(e) => {
            rep.failure = Some(format!("stage-one fit: {e}"));
            return rep;
        }
    };
    rep.theta_hat = Some(fit.params.theta());

    let swarm = SwarmConfig { seed: cfg.swarm.seed.wrapping_add(index as u64), ..cfg.swarm.clone() };
    let stage2 = match bp_design(&fit.params, &cfg.targets, cfg.criterion, &swarm, Some((&cfg.stage1, cfg.alpha))) {
        Ok(r) if r.value.is_finite() => r.design,
        Ok(_) => {
            rep.failure = Some("stage-two search found no finite design".into());
            return rep;
        }
        Err(e) => {
            rep.failure = Some(format!("stage-two design: {e}"));
            return rep;
        }
    };
    let combined = cfg.stage1.mixture(&stage2, 1.0 - cfg.alpha);
    rep.stage2 = Some(stage2);
    evaluate(&combined, &mut rep);
    rep
}

/// Runs `config.n_reps` seeded replicates in parallel; failed replicates are kept and counted.
pub fn two_stage_simulate(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let replicates: Vec<Replicate> = (0..config.n_reps).into_par_iter().map(|i| run_replicate(config, i)).collect();
    let ok: Vec<&Replicate> = replicates.iter().filter(|r| r.failure.is_none()).collect();
    let mean = |f: fn(&Replicate) -> Option<f64>| {
        let v: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let mean_d = mean(|r| r.d_value);
    let mean_l = mean(|r| r.l_value);
    Ok(SimReport {
        config: config.clone(),
        n_failed: replicates.len() - ok.len(),
        replicates,
        mean_d,
        mean_l,
        one_stage_d: penalized_criterion(&config.stage1, &config.truth, &config.targets, BpCriterion::D)?,
        one_stage_l: penalized_criterion(&config.stage1, &config.truth, &config.targets, BpCriterion::L)?,
    })
}
