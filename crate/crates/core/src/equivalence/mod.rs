//! Directional (Frechet) derivatives of the design criteria and equivalence-theorem checks.
//!
//! Every sensitivity value here is the derivative of the maximised criterion when the free
//! design mass moves toward a one-point design; a design is optimal when no dose gives a
//! positive value.

mod plot;

pub use plot::{sensitivity_csv, sensitivity_svg};

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::criteria::{ComponentWeights, Evaluator};
use crate::design::Design;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::FisherInfo;

/// Default verdict tolerance on the maximum sensitivity.
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

/// Information of a design split into its optimisable and fixed parts.
#[derive(Debug, Clone)]
pub struct InfoSplit {
    /// Full information `M`.
    pub total: DMatrix<f64>,
    /// Information of the free points normalised to unit mass (`M_1`).
    pub free: DMatrix<f64>,
    /// Share of `M` that does not move (fixed arms and stage-one data).
    pub fixed_mass: f64,
}

/// `F_D(M_1, M_2) = (1 - a) Tr(M^{-1}(M_2 - M_1))` with `M_2 = s~ s~^T`.
pub fn frechet_d(split: &InfoSplit, stilde: &DMatrix<f64>) -> Result<f64> {
    let inv = inverse(&split.total)?;
    let m2 = stilde * stilde.transpose();
    Ok((1.0 - split.fixed_mass) * (&inv * (m2 - &split.free)).trace())
}

/// The same derivative written through the low-rank update of a single fixed arm `s0` with
/// weight `alpha`:
/// `Tr(M_1^{-1} M_2 - I) - Tr(((1-a)/a I + s0^T M_1^{-1} s0)^{-1} s0^T (M_1^{-1} M_2 M_1^{-1} - M_1^{-1}) s0)`.
/// Equals `Tr(M^{-1}(M_2 - M_1))` for `M = (1 - a) M_1 + a s0 s0^T`.
pub fn frechet_d_fixed_arm(
    m1: &DMatrix<f64>,
    s0: &DMatrix<f64>,
    alpha: f64,
    m2: &DMatrix<f64>,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("fixed-arm weight {alpha} outside (0, 1)")));
    }
    let inv1 = inverse(m1)?;
    let p = m1.nrows();
    let k = s0.ncols();
    let first = (&inv1 * m2).trace() - p as f64;
    let inner = DMatrix::identity(k, k) * ((1.0 - alpha) / alpha) + s0.transpose() * &inv1 * s0;
    let inner_inv = inner
        .try_inverse()
        .ok_or_else(|| Error::Singular("(1-a)/a I + s0^T M1^-1 s0".into()))?;
    let mid = s0.transpose() * (&inv1 * m2 * &inv1 - &inv1) * s0;
    Ok(first - (inner_inv * mid).trace())
}

/// `F_c(M, M_2) = c^T M^{-1} c - c^T M^{-1} s~ s~^T M^{-1} c` (the variance change; negative
/// values mean the direction improves the design).
pub fn frechet_c(m: &DMatrix<f64>, stilde: &DMatrix<f64>, c: &DVector<f64>) -> Result<f64> {
    let inv = inverse(m)?;
    let mc = &inv * c;
    let proj = stilde.transpose() * &mc;
    Ok(c.dot(&mc) - proj.norm_squared())
}

/// `F_A(M_1, M_2) = -(1 - a) Tr(M^{-1}(M_2 - M_1) M^{-1})` (derivative of `tr M^{-1}`).
pub fn frechet_a(split: &InfoSplit, stilde: &DMatrix<f64>) -> Result<f64> {
    let inv = inverse(&split.total)?;
    let m2 = stilde * stilde.transpose();
    Ok(-(1.0 - split.fixed_mass) * (&inv * (m2 - &split.free) * &inv).trace())
}

fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    linalg::spd_inverse(m).ok_or_else(|| Error::Singular("information matrix".into()))
}

/// Uniform evaluation grid on the transformed dose scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { lo: 0.0, hi: 30001f64.ln(), n: 2001 }
    }
}

impl GridSpec {
    pub fn points(&self) -> Result<Vec<f64>> {
        if self.n < 2 || !(self.lo < self.hi) {
            return Err(Error::invalid(format!(
                "grid needs n >= 2 and lo < hi, got n = {}, [{}, {}]",
                self.n, self.lo, self.hi
            )));
        }
        let h = (self.hi - self.lo) / (self.n - 1) as f64;
        Ok((0..self.n).map(|i| if i + 1 == self.n { self.hi } else { self.lo + h * i as f64 }).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub max_value: f64,
    pub argmax: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Optimal,
    NotOptimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub curve: SensitivityCurve,
    /// Sensitivity at the free support points.
    pub support_values: Vec<f64>,
    pub tolerance: f64,
    pub verdict: Verdict,
    /// A generalised inverse replaced the singular information matrix (c-optimality only).
    pub generalized_inverse: bool,
    /// Grid doses dropped because the model is degenerate there.
    pub skipped: usize,
}

/// Per-nominal pieces needed to evaluate the sensitivity at any dose.
struct Term {
    weights: ComponentWeights,
    theta: crate::model::ParamVector,
    c: DVector<f64>,
    /// `M^{-1}` or a generalised inverse.
    inv: DMatrix<f64>,
    free: DMatrix<f64>,
    /// Normalisers: `p`, `tr M^{-1}`, `c^T M^{-1} c`.
    p: f64,
    tr_inv: f64,
    cvar: f64,
}

impl Term {
    fn derivative(&self, s: &DMatrix<f64>, free_share: f64) -> f64 {
        let w = &self.weights;
        let mut v = 0.0;
        if w.d > 0.0 {
            let toward = (s.transpose() * &self.inv * s).trace();
            let here = (&self.inv * &self.free).trace();
            v += w.d / self.p * (toward - here);
        }
        if w.a > 0.0 {
            let inv2 = &self.inv * &self.inv;
            let toward = (s.transpose() * &inv2 * s).trace();
            let here = (&inv2 * &self.free).trace();
            v += w.a * (toward - here) / self.tr_inv;
        }
        if w.c > 0.0 {
            let mc = &self.inv * &self.c;
            let toward = (s.transpose() * &mc).norm_squared();
            let here = mc.dot(&(&self.free * &mc));
            v += w.c * (toward - here) / self.cvar;
        }
        free_share * v
    }
}

/// Sensitivity of the criterion bound in `evaluator` at `design` over `grid`, with an
/// OPTIMAL / NOT_OPTIMAL verdict at `tolerance`.
pub fn verify_design(
    evaluator: &Evaluator,
    design: &Design,
    grid: &GridSpec,
    tolerance: f64,
) -> Result<Verification> {
    design.validate()?;
    let free_mass = design.free_mass();
    if !(free_mass > 0.0) {
        return Err(Error::invalid("design has no free mass to verify"));
    }
    let spec = evaluator.spec();
    let free_share = (1.0 - evaluator.alpha()) * free_mass;
    let free_design = design.free_part()?;
    let infos = evaluator.nominal_info(design)?;
    let k_sets = infos.len() as f64;

    let mut singular = Vec::new();
    let mut terms = Vec::with_capacity(infos.len());
    for (i, ni) in infos.iter().enumerate() {
        let free = crate::model::fisher_info(spec, &ni.theta, &free_design)?.matrix;
        let inv = linalg::spd_inverse(&ni.total.matrix);
        if inv.is_none() {
            if ni.weights.d > 0.0 || ni.weights.a > 0.0 {
                return Err(Error::Singular(format!(
                    "information under nominal set {} is singular; D/A sensitivity undefined",
                    i + 1
                )));
            }
            if !linalg::in_column_space(&ni.total.matrix, &ni.c) {
                return Err(Error::Singular(format!(
                    "nominal set {}: the endpoint is not estimable from this design",
                    i + 1
                )));
            }
            singular.push(i);
        }
        let inv = inv.unwrap_or_else(|| linalg::psd_pinv(&ni.total.matrix));
        let tr_inv = inv.trace();
        let cvar = ni.c.dot(&(&inv * &ni.c));
        terms.push(Term {
            weights: ni.weights,
            theta: ni.theta.clone(),
            c: ni.c.clone(),
            inv,
            free,
            p: spec.n_params() as f64,
            tr_inv,
            cvar,
        });
    }

    // elemental factors on the grid, per nominal set
    let mut grid_pts = Vec::new();
    let mut stildes: Vec<Vec<DMatrix<f64>>> = Vec::new();
    let mut skipped = 0;
    for x in grid.points()? {
        let row: Result<Vec<DMatrix<f64>>> =
            terms.iter().map(|t| spec.stilde(&t.theta, x)).collect();
        match row {
            Ok(r) => {
                grid_pts.push(x);
                stildes.push(r);
            }
            Err(e) => {
                skipped += 1;
                warn!("skipping grid dose {x}: {e}");
            }
        }
    }
    if grid_pts.is_empty() {
        return Err(Error::invalid("every grid point is degenerate"));
    }

    let generalized_inverse = !singular.is_empty();
    if generalized_inverse {
        tune_generalized_inverses(&mut terms, &infos, &singular, &stildes, free_share, k_sets)?;
    }

    let eval = |ss: &[DMatrix<f64>]| -> f64 {
        terms.iter().zip(ss).map(|(t, s)| t.derivative(s, free_share)).sum::<f64>() / k_sets
    };
    let values: Vec<f64> = stildes.iter().map(|ss| eval(ss)).collect();
    let (imax, max_value) = values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let support_values = design
        .points
        .iter()
        .map(|&x| {
            let ss: Result<Vec<DMatrix<f64>>> =
                terms.iter().map(|t| spec.stilde(&t.theta, x)).collect();
            ss.map(|ss| eval(&ss))
        })
        .collect::<Result<Vec<f64>>>()?;
    let max_all = support_values.iter().copied().fold(max_value, f64::max);
    Ok(Verification {
        curve: SensitivityCurve {
            grid: grid_pts.clone(),
            values,
            max_value,
            argmax: grid_pts[imax],
        },
        support_values,
        tolerance,
        verdict: if max_all <= tolerance { Verdict::Optimal } else { Verdict::NotOptimal },
        generalized_inverse,
        skipped,
    })
}

/// For c-type terms with singular information, pick generalised inverses
/// `G = (M + H H^T)^{-1}` (H spanning a complement of the range of M) that minimise the
/// maximum sensitivity; the equivalence theorem holds for some g-inverse, not for every one.
fn tune_generalized_inverses(
    terms: &mut [Term],
    infos: &[crate::criteria::NominalInfo],
    singular: &[usize],
    stildes: &[Vec<DMatrix<f64>>],
    free_share: f64,
    k_sets: f64,
) -> Result<()> {
    let p = terms[0].p as usize;
    // null-space directions of each singular M give the starting H
    let mut layout = Vec::new();
    let mut start = Vec::new();
    for &i in singular {
        let m = &infos[i].total.matrix;
        let eig = m.clone().symmetric_eigen();
        let hi = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b));
        let scale = (m.trace() / p as f64).sqrt();
        let mut cols = 0;
        for (j, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam <= linalg::SINGULAR_RTOL.sqrt() * hi {
                start.extend(eig.eigenvectors.column(j).iter().map(|v| v * scale));
                cols += 1;
            }
        }
        layout.push((i, cols));
    }

    let build = |params: &[f64]| -> Option<Vec<(usize, DMatrix<f64>, f64)>> {
        let mut out = Vec::new();
        let mut off = 0;
        for &(i, cols) in &layout {
            let h = DMatrix::from_column_slice(p, cols, &params[off..off + p * cols]);
            off += p * cols;
            let g = linalg::spd_inverse(&(&infos[i].total.matrix + &h * h.transpose()))?;
            let cvar = infos[i].c.dot(&(&g * &infos[i].c));
            out.push((i, g, cvar));
        }
        Some(out)
    };

    let others: Vec<usize> = (0..terms.len()).filter(|i| !singular.contains(i)).collect();
    let base: Vec<f64> = stildes
        .iter()
        .map(|ss| others.iter().map(|&i| terms[i].derivative(&ss[i], free_share)).sum::<f64>())
        .collect();

    struct MaxSensitivity<'a, F: Fn(&[f64]) -> Option<Vec<(usize, DMatrix<f64>, f64)>>> {
        build: &'a F,
        terms: &'a [Term],
        stildes: &'a [Vec<DMatrix<f64>>],
        base: &'a [f64],
        free_share: f64,
        k_sets: f64,
    }
    impl<F: Fn(&[f64]) -> Option<Vec<(usize, DMatrix<f64>, f64)>>> CostFunction for MaxSensitivity<'_, F> {
        type Param = Vec<f64>;
        type Output = f64;
        fn cost(&self, params: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
            let Some(gs) = (self.build)(params) else { return Ok(f64::INFINITY) };
            let mut worst = f64::NEG_INFINITY;
            for (ss, b) in self.stildes.iter().zip(self.base) {
                let mut v = *b;
                for (i, g, cvar) in &gs {
                    let t = &self.terms[*i];
                    let gc = g * &t.c;
                    let toward = (ss[*i].transpose() * &gc).norm_squared();
                    let here = gc.dot(&(&t.free * &gc));
                    v += self.free_share * t.weights.c * (toward - here) / cvar;
                }
                worst = worst.max(v / self.k_sets);
            }
            Ok(worst)
        }
    }

    let n = start.len();
    let mut simplex = vec![start.clone()];
    for j in 0..n {
        let mut v = start.clone();
        v[j] += 0.25 * start[j].abs().max(0.1);
        simplex.push(v);
    }
    let problem = MaxSensitivity { build: &build, terms, stildes, base: &base, free_share, k_sets };
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-12)
        .map_err(|e| Error::Optimizer(e.to_string()))?;
    let res = Executor::new(problem, solver)
        .configure(|s| s.max_iters(4000))
        .run()
        .map_err(|e| Error::Optimizer(e.to_string()))?;
    let best = res.state().best_param.clone().unwrap_or(start);
    let gs = build(&best).ok_or_else(|| Error::Singular("generalised inverse".into()))?;
    for (i, g, cvar) in gs {
        terms[i].tr_inv = g.trace();
        terms[i].inv = g;
        terms[i].cvar = cvar;
    }
    Ok(())
}

/// Build an [`InfoSplit`] for `design` under one nominal set of `evaluator`.
pub fn info_split(evaluator: &Evaluator, design: &Design, set: usize) -> Result<InfoSplit> {
    let total: FisherInfo = evaluator.info(set, design)?;
    let infos = evaluator.nominal_info(design)?;
    let free = crate::model::fisher_info(evaluator.spec(), &infos[set].theta, &design.free_part()?)?;
    Ok(InfoSplit {
        total: total.matrix,
        free: free.matrix,
        fixed_mass: 1.0 - (1.0 - evaluator.alpha()) * design.free_mass(),
    })
}
