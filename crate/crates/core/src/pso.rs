//! Particle swarm search over designs: support points in a dose box, weights on the simplex of
//! the free mass (through a softmax of unconstrained logits), fixed arms carried along.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{Design, FixedArm, MERGE_TOL};
use crate::error::{Error, Result};

/// Logits are kept in this range so weights never underflow to exactly zero mid-search.
const LOGIT_BOUND: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwarmConfig {
    pub n_particles: usize,
    /// Number of free support points.
    pub n_support: usize,
    pub iters: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub seed: u64,
    /// `[low, high]` on the transformed dose scale.
    pub dose_box: [f64; 2],
    /// Run a Nelder-Mead polish and a merge/prune pass after the swarm.
    pub polish: bool,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        Self {
            n_particles: 200,
            n_support: 3,
            iters: 500,
            inertia: 0.729,
            cognitive: 1.49445,
            social: 1.49445,
            seed: 1,
            dose_box: [0.0, 30001f64.ln()],
            polish: true,
        }
    }
}

impl SwarmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::invalid("the swarm needs at least two particles"));
        }
        if self.n_support == 0 {
            return Err(Error::invalid("at least one free support point is required"));
        }
        if !(self.inertia > 0.0 && self.inertia < 1.0) {
            return Err(Error::invalid(format!("inertia {} outside (0, 1)", self.inertia)));
        }
        if !(self.cognitive >= 0.0 && self.social >= 0.0) {
            return Err(Error::invalid("acceleration coefficients must be non-negative"));
        }
        let [lo, hi] = self.dose_box;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!("dose box [{lo}, {hi}] is empty or not finite")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmResult {
    pub design: Design,
    pub value: f64,
    /// Best value after each iteration (non-decreasing).
    pub trace: Vec<f64>,
    pub evaluations: usize,
}

impl SwarmResult {
    /// `iter,best_value` CSV of the trace.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iter,best_value\n");
        for (i, v) in self.trace.iter().enumerate() {
            s.push_str(&format!("{},{}\n", i + 1, v));
        }
        s
    }
}

/// Maps particle coordinates to designs.
#[derive(Debug, Clone)]
struct Encoding {
    n: usize,
    lo: f64,
    hi: f64,
    arms: Vec<FixedArm>,
    free_mass: f64,
}

impl Encoding {
    fn decode(&self, z: &[f64]) -> Design {
        let pts: Vec<f64> = z[..self.n].iter().map(|x| x.clamp(self.lo, self.hi)).collect();
        let logits = &z[self.n..];
        let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        Design {
            points: pts,
            weights: e.iter().map(|v| v / s * self.free_mass).collect(),
            fixed_arms: self.arms.clone(),
        }
    }

    fn encode(&self, d: &Design) -> Vec<f64> {
        let mut z: Vec<f64> = d.points.clone();
        let mass: f64 = d.weights.iter().sum();
        z.extend(d.weights.iter().map(|w| (w / mass).max(1e-12).ln().max(-LOGIT_BOUND)));
        z
    }
}

fn safe(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Maximise `objective` over designs with `config.n_support` free points plus `fixed_arms`.
pub fn optimize<F>(objective: &F, config: &SwarmConfig, fixed_arms: &[FixedArm]) -> Result<SwarmResult>
where
    F: Fn(&Design) -> f64 + Sync,
{
    config.validate()?;
    let fixed_mass: f64 = fixed_arms.iter().map(|a| a.weight).sum();
    if !(fixed_mass < 1.0) || fixed_arms.iter().any(|a| !(a.weight >= 0.0)) {
        return Err(Error::invalid(format!("fixed arms take mass {fixed_mass}; must be in [0, 1)")));
    }
    let enc = Encoding {
        n: config.n_support,
        lo: config.dose_box[0],
        hi: config.dose_box[1],
        arms: fixed_arms.to_vec(),
        free_mass: 1.0 - fixed_mass,
    };
    let dim = 2 * enc.n;
    let range = enc.hi - enc.lo;
    let vmax: Vec<f64> = (0..dim).map(|j| if j < enc.n { 0.25 * range } else { 4.0 }).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut pos: Vec<Vec<f64>> = (0..config.n_particles)
        .map(|_| {
            (0..dim)
                .map(|j| if j < enc.n { rng.random_range(enc.lo..=enc.hi) } else { rng.random_range(-1.0..1.0) })
                .collect()
        })
        .collect();
    let mut vel: Vec<Vec<f64>> = (0..config.n_particles)
        .map(|_| (0..dim).map(|j| rng.random_range(-0.1..0.1) * vmax[j]).collect())
        .collect();
    let eval = |ps: &Vec<Vec<f64>>| -> Vec<f64> {
        ps.par_iter().map(|z| safe(objective(&enc.decode(z)))).collect()
    };

    let mut vals = eval(&pos);
    let mut evaluations = vals.len();
    if vals.iter().all(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::Optimizer("every initial particle gives an undefined criterion".into()));
    }
    let mut pbest = pos.clone();
    let mut pbest_val = vals.clone();
    let (mut gi, mut gval) = argmax(&pbest_val);
    let mut gbest = pbest[gi].clone();
    let mut trace = Vec::with_capacity(config.iters);

    for it in 0..config.iters {
        for (i, (x, v)) in pos.iter_mut().zip(vel.iter_mut()).enumerate() {
            for j in 0..dim {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let nv = config.inertia * v[j]
                    + config.cognitive * r1 * (pbest[i][j] - x[j])
                    + config.social * r2 * (gbest[j] - x[j]);
                v[j] = nv.clamp(-vmax[j], vmax[j]);
                x[j] += v[j];
                let (lo, hi) = if j < enc.n { (enc.lo, enc.hi) } else { (-LOGIT_BOUND, LOGIT_BOUND) };
                // reflect back into the box
                if x[j] > hi {
                    x[j] = (2.0 * hi - x[j]).max(lo);
                    v[j] = -v[j];
                } else if x[j] < lo {
                    x[j] = (2.0 * lo - x[j]).min(hi);
                    v[j] = -v[j];
                }
            }
        }
        vals = eval(&pos);
        evaluations += vals.len();
        for i in 0..pos.len() {
            if vals[i] > pbest_val[i] {
                pbest_val[i] = vals[i];
                pbest[i].clone_from(&pos[i]);
            }
        }
        let (bi, bv) = argmax(&pbest_val);
        if bv > gval {
            gi = bi;
            gval = bv;
            gbest = pbest[gi].clone();
        }
        trace.push(gval);
        if it % 100 == 0 {
            debug!("pso iteration {it}: best {gval}");
        }
    }

    let mut design = enc.decode(&gbest);
    if config.polish {
        let (d, _, used) = refine(objective, &enc, design, gval)?;
        design = d;
        evaluations += used;
    }
    let design = design.merged(MERGE_TOL).sorted();
    let value = safe(objective(&design));
    if let Some(last) = trace.last_mut() {
        *last = last.max(value);
    }
    Ok(SwarmResult { design, value, trace, evaluations })
}

fn argmax(v: &[f64]) -> (usize, f64) {
    v.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |a, (i, x)| if x > a.1 { (i, x) } else { a })
}

struct Negated<'a, F> {
    objective: &'a F,
    enc: &'a Encoding,
}

impl<F: Fn(&Design) -> f64> CostFunction for Negated<'_, F> {
    type Param = Vec<f64>;
    type Output = f64;
    fn cost(&self, z: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let v = safe((self.objective)(&self.enc.decode(z)));
        Ok(if v == f64::NEG_INFINITY { 1e300 } else { -v })
    }
}

/// Nelder-Mead from `start` on the same encoding; returns the better of start and result.
fn polish<F: Fn(&Design) -> f64>(
    objective: &F,
    enc: &Encoding,
    start: &Design,
    start_value: f64,
) -> Result<(Design, f64, usize)> {
    let z0 = enc.encode(start);
    let dim = z0.len();
    let range = enc.hi - enc.lo;
    let mut simplex = vec![z0.clone()];
    for j in 0..dim {
        let mut z = z0.clone();
        z[j] += if j < enc.n { 0.01 * range } else { 0.1 };
        simplex.push(z);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-14)
        .map_err(|e| Error::Optimizer(e.to_string()))?;
    let res = Executor::new(Negated { objective, enc }, solver)
        .configure(|s| s.max_iters(4000))
        .run()
        .map_err(|e| Error::Optimizer(e.to_string()))?;
    let used = res.state().get_func_counts().get("cost_count").copied().unwrap_or(0) as usize;
    let Some(best) = res.state().best_param.clone() else {
        return Ok((start.clone(), start_value, used));
    };
    let d = enc.decode(&best);
    let v = safe(objective(&d));
    if v > start_value {
        Ok((d, v, used))
    } else {
        Ok((start.clone(), start_value, used))
    }
}

/// Polish, then merge or drop support points while the criterion does not get worse, then
/// polish the reduced design.
fn refine<F: Fn(&Design) -> f64>(
    objective: &F,
    enc: &Encoding,
    design: Design,
    value: f64,
) -> Result<(Design, f64, usize)> {
    let (mut design, mut value, mut used) = polish(objective, enc, &design, value)?;
    loop {
        let before = design.points.len();
        let (d, v) = simplify(objective, design.merged(MERGE_TOL).sorted(), value);
        design = d;
        value = v;
        if design.points.len() == before || design.points.is_empty() {
            break;
        }
        let sub = Encoding { n: design.points.len(), ..enc.clone() };
        let (d, v, u) = polish(objective, &sub, &design, value)?;
        design = d;
        value = v;
        used += u;
    }
    Ok((design, value, used))
}

/// Greedy merges of neighbouring points and removals of light points, accepted when the
/// criterion does not decrease beyond round-off.
fn simplify<F: Fn(&Design) -> f64>(objective: &F, mut design: Design, mut value: f64) -> (Design, f64) {
    let accept = |new: f64, old: f64| new >= old - 1e-9 * old.abs().max(1.0);
    loop {
        let n = design.points.len();
        if n <= 1 {
            return (design, value);
        }
        let mut best: Option<(Design, f64)> = None;
        for i in 0..n - 1 {
            let mut d = design.clone();
            let (w1, w2) = (d.weights[i], d.weights[i + 1]);
            let w = w1 + w2;
            if w > 0.0 {
                d.points[i] = (d.points[i] * w1 + d.points[i + 1] * w2) / w;
            }
            d.weights[i] = w;
            d.points.remove(i + 1);
            d.weights.remove(i + 1);
            let v = safe(objective(&d));
            if accept(v, value) && best.as_ref().is_none_or(|b| v > b.1) {
                best = Some((d, v));
            }
        }
        for i in 0..n {
            let wi = design.weights[i];
            let rest: f64 = design.free_mass() - wi;
            if rest <= 0.0 {
                continue;
            }
            let mut d = design.clone();
            d.points.remove(i);
            d.weights.remove(i);
            for w in &mut d.weights {
                *w *= (rest + wi) / rest;
            }
            let v = safe(objective(&d));
            if accept(v, value) && best.as_ref().is_none_or(|b| v > b.1) {
                best = Some((d, v));
            }
        }
        match best {
            Some((d, v)) => {
                design = d;
                value = v.max(value);
            }
            None => return (design, value),
        }
    }
}

/// Run the swarm for each number of free points in `counts` and keep the best design
/// (fewer points win ties).
pub fn sweep_support<F>(
    objective: &F,
    config: &SwarmConfig,
    fixed_arms: &[FixedArm],
    counts: impl IntoIterator<Item = usize>,
) -> Result<SwarmResult>
where
    F: Fn(&Design) -> f64 + Sync,
{
    let mut best: Option<SwarmResult> = None;
    for n in counts {
        let cfg = SwarmConfig { n_support: n, ..config.clone() };
        let r = optimize(objective, &cfg, fixed_arms)?;
        let better = match &best {
            None => true,
            Some(b) => {
                r.value > b.value + 1e-9 * b.value.abs().max(1.0)
                    || (r.value >= b.value - 1e-9 * b.value.abs().max(1.0)
                        && r.design.points.len() < b.design.points.len())
            }
        };
        if better {
            best = Some(r);
        }
    }
    best.ok_or_else(|| Error::invalid("no support sizes to sweep"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SwarmConfig {
        SwarmConfig { n_particles: 30, iters: 60, n_support: 2, dose_box: [0.0, 10.0], ..Default::default() }
    }

    #[test]
    fn rejects_bad_config() {
        let f = |_: &Design| 0.0;
        for cfg in [
            SwarmConfig { n_particles: 1, ..small() },
            SwarmConfig { inertia: 1.2, ..small() },
            SwarmConfig { dose_box: [3.0, 3.0], ..small() },
        ] {
            assert!(optimize(&f, &cfg, &[]).is_err());
        }
    }

    #[test]
    fn all_undefined_objective_fails() {
        let f = |_: &Design| f64::NEG_INFINITY;
        assert!(matches!(optimize(&f, &small(), &[]), Err(Error::Optimizer(_))));
    }

    #[test]
    fn output_is_feasible_and_trace_monotone() {
        let f = |d: &Design| -d.points.iter().zip(&d.weights).map(|(x, w)| w * (x - 3.0).powi(2)).sum::<f64>();
        let arms = [FixedArm { dose: 0.0, weight: 0.2 }];
        let r = optimize(&f, &small(), &arms).unwrap();
        r.design.validate().unwrap();
        assert!(r.design.points.iter().all(|x| (0.0..=10.0).contains(x)));
        assert!(r.trace.windows(2).all(|w| w[1] >= w[0]));
    }
}
