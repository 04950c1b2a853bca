//! Optimality criteria (maximise convention), robust composites over nominal sets, stage-one
//! information mixing, Sherman-Morrison-Woodbury updates and efficiencies.

mod swm;

pub use swm::{swm_augmented_cvar, swm_augmented_det, swm_augmented_log_det};

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::fitting::{ld50_gradient, rd50_gradient, EndpointKind};
use crate::linalg;
use crate::model::{fisher_info, FisherInfo, ModelSpec, ParamVector};

/// `log det M`, `-inf` when `M` is singular.
pub fn phi_d(m: &FisherInfo) -> f64 {
    linalg::log_det(&m.matrix)
}

/// `c^T M^- c`: the ordinary inverse when `M` is nonsingular, the pseudo-inverse when `M` is
/// singular but `c` is estimable, `+inf` otherwise.
pub fn phi_c(m: &FisherInfo, c: &DVector<f64>) -> f64 {
    if let Some(chol) = linalg::checked_cholesky(&m.matrix) {
        // ||L^{-1} c||^2 keeps the error at cond(L) rather than cond(M)
        let y = chol.l_dirty().solve_lower_triangular(c).expect("nonzero Cholesky pivots");
        return y.norm_squared();
    }
    if c.norm() > 0.0 && linalg::in_column_space(&m.matrix, c) {
        let pinv = linalg::psd_pinv(&m.matrix);
        return (c.transpose() * pinv * c)[(0, 0)];
    }
    f64::INFINITY
}

/// `tr M^{-1}`, `+inf` when `M` is singular.
pub fn phi_a(m: &FisherInfo) -> f64 {
    match linalg::spd_inverse(&m.matrix) {
        Some(inv) => inv.trace(),
        None => f64::INFINITY,
    }
}

/// `(lambda / p) log det M - (1 - lambda) log(c^T M^{-1} c)`.
pub fn phi_dual(m: &FisherInfo, c: &DVector<f64>, lambda: f64) -> f64 {
    ComponentWeights::dual(lambda).combine(m, c)
}

/// Convex weights on the D, A and c components of a single-nominal criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentWeights {
    pub d: f64,
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub c: f64,
}

impl ComponentWeights {
    pub const D: Self = Self { d: 1.0, a: 0.0, c: 0.0 };
    pub const A: Self = Self { d: 0.0, a: 1.0, c: 0.0 };
    pub const C: Self = Self { d: 0.0, a: 0.0, c: 1.0 };

    pub fn dual(lambda: f64) -> Self {
        Self { d: lambda, a: 0.0, c: 1.0 - lambda }
    }

    pub fn multiple(lambda_d: f64, lambda_a: f64) -> Self {
        Self { d: lambda_d, a: lambda_a, c: 1.0 - lambda_d - lambda_a }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("D", self.d), ("A", self.a), ("c", self.c)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} weight {v} outside [0, 1]")));
            }
        }
        let s = self.d + self.a + self.c;
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("criterion weights sum to {s}, expected 1")));
        }
        Ok(())
    }

    pub fn needs_c(&self) -> bool {
        self.c > 0.0
    }

    /// `(d / p) log det M - a log tr M^{-1} - c log(c^T M^{-1} c)`; `-inf` when a used
    /// component is undefined.
    pub fn combine(&self, m: &FisherInfo, cvec: &DVector<f64>) -> f64 {
        let p = m.dim() as f64;
        let mut v = 0.0;
        if self.d > 0.0 {
            v += self.d / p * phi_d(m);
        }
        if self.a > 0.0 {
            v -= self.a * phi_a(m).ln();
        }
        if self.c > 0.0 {
            v -= self.c * phi_c(m, cvec).ln();
        }
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    D,
    C,
    A,
    Dual,
    RobustD,
    RobustDual,
    Multiple,
}

/// Stage-one design whose information is mixed in with proportion `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOne {
    pub design: Design,
    pub alpha: f64,
}

/// A fully specified (possibly robust) design criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionSpec {
    pub kind: CriterionKind,
    /// One entry per nominal set (a single entry is broadcast).
    pub weights: Vec<ComponentWeights>,
    pub nominal_sets: Vec<ParamVector>,
    /// Scalar function targeted by the c component.
    #[serde(default = "default_endpoint")]
    pub endpoint: EndpointKind,
    #[serde(default)]
    pub stage1: Option<StageOne>,
}

fn default_endpoint() -> EndpointKind {
    EndpointKind::Rd50
}

impl CriterionSpec {
    fn build(kind: CriterionKind, w: ComponentWeights, nominal_sets: Vec<ParamVector>) -> Self {
        Self { kind, weights: vec![w], nominal_sets, endpoint: EndpointKind::Rd50, stage1: None }
    }

    pub fn d(theta: ParamVector) -> Self {
        Self::build(CriterionKind::D, ComponentWeights::D, vec![theta])
    }

    pub fn c(theta: ParamVector) -> Self {
        Self::build(CriterionKind::C, ComponentWeights::C, vec![theta])
    }

    pub fn a(theta: ParamVector) -> Self {
        Self::build(CriterionKind::A, ComponentWeights::A, vec![theta])
    }

    pub fn dual(theta: ParamVector, lambda: f64) -> Self {
        Self::build(CriterionKind::Dual, ComponentWeights::dual(lambda), vec![theta])
    }

    pub fn robust_d(sets: Vec<ParamVector>) -> Self {
        Self::build(CriterionKind::RobustD, ComponentWeights::D, sets)
    }

    pub fn robust_dual(sets: Vec<ParamVector>, lambda: f64) -> Self {
        Self::build(CriterionKind::RobustDual, ComponentWeights::dual(lambda), sets)
    }

    pub fn multiple(sets: Vec<ParamVector>, lambda_d: f64, lambda_a: f64) -> Self {
        Self::build(CriterionKind::Multiple, ComponentWeights::multiple(lambda_d, lambda_a), sets)
    }

    pub fn with_stage1(mut self, design: Design, alpha: f64) -> Self {
        self.stage1 = Some(StageOne { design, alpha });
        self
    }

    pub fn with_endpoint(mut self, endpoint: EndpointKind) -> Self {
        self.endpoint = endpoint;
        self
    }

    pub fn n_sets(&self) -> usize {
        self.nominal_sets.len()
    }

    /// Weights for nominal set `i`.
    pub fn weights_for(&self, i: usize) -> ComponentWeights {
        if self.weights.len() == 1 {
            self.weights[0]
        } else {
            self.weights[i]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nominal_sets.is_empty() {
            return Err(Error::invalid("criterion needs at least one nominal set"));
        }
        if self.weights.len() != 1 && self.weights.len() != self.nominal_sets.len() {
            return Err(Error::Dimension(format!(
                "{} weight entries for {} nominal sets",
                self.weights.len(),
                self.nominal_sets.len()
            )));
        }
        for w in &self.weights {
            w.validate()?;
        }
        if let Some(s1) = &self.stage1 {
            if !(0.0..=1.0).contains(&s1.alpha) {
                return Err(Error::invalid(format!("stage-one proportion {} outside [0, 1]", s1.alpha)));
            }
            s1.design.validate()?;
        }
        Ok(())
    }
}

/// Endpoint gradient over the free parameters, used as the c vector.
pub fn endpoint_gradient(theta: &ParamVector, endpoint: EndpointKind) -> Result<DVector<f64>> {
    let g = match endpoint {
        EndpointKind::Rd50 => rd50_gradient(theta)?,
        EndpointKind::Ld50 => ld50_gradient(theta)?,
        EndpointKind::Ratio => {
            return Err(Error::invalid("the ratio endpoint is not available as a c-criterion"))
        }
    };
    Ok(DVector::from_column_slice(&g[..theta.len()]))
}

/// `alpha M_stage1 + (1 - alpha) M(stage2)`.
pub fn two_stage_info(
    stage1: &FisherInfo,
    stage2: &Design,
    alpha: f64,
    spec: &ModelSpec,
    theta: &ParamVector,
) -> Result<FisherInfo> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("stage-one proportion {alpha} outside [0, 1]")));
    }
    let m2 = fisher_info(spec, theta, stage2)?;
    m2.mix(stage1, alpha)
}

/// Per-nominal precomputed pieces.
#[derive(Debug, Clone)]
struct Nominal {
    theta: ParamVector,
    weights: ComponentWeights,
    c: DVector<f64>,
    /// `alpha M_stage1`, or zero.
    stage1: DMatrix<f64>,
}

/// A criterion bound to a model: evaluates designs and exposes the per-nominal pieces used by
/// the sensitivity functions.
#[derive(Debug, Clone)]
pub struct Evaluator {
    spec: ModelSpec,
    kind: CriterionKind,
    nominals: Vec<Nominal>,
    alpha: f64,
}

/// Information split used by the sensitivity functions.
#[derive(Debug, Clone)]
pub struct NominalInfo {
    pub theta: ParamVector,
    pub weights: ComponentWeights,
    pub c: DVector<f64>,
    /// Full information including fixed arms and the stage-one mix.
    pub total: FisherInfo,
}

impl Evaluator {
    pub fn new(spec: &ModelSpec, crit: &CriterionSpec) -> Result<Self> {
        crit.validate()?;
        let p = spec.n_params();
        let alpha = crit.stage1.as_ref().map_or(0.0, |s| s.alpha);
        let mut nominals = Vec::with_capacity(crit.n_sets());
        for (i, theta) in crit.nominal_sets.iter().enumerate() {
            if theta.len() != p {
                return Err(Error::Dimension(format!(
                    "nominal set {} has {} values, model '{}' has {p} parameters",
                    i + 1,
                    theta.len(),
                    spec.name()
                )));
            }
            let weights = crit.weights_for(i);
            let c = if weights.needs_c() {
                endpoint_gradient(theta, crit.endpoint)?
            } else {
                DVector::zeros(p)
            };
            let stage1 = match &crit.stage1 {
                Some(s1) if s1.alpha > 0.0 => fisher_info(spec, theta, &s1.design)?.matrix * s1.alpha,
                _ => DMatrix::zeros(p, p),
            };
            nominals.push(Nominal { theta: theta.clone(), weights, c, stage1 });
        }
        Ok(Self { spec: spec.clone(), kind: crit.kind, nominals, alpha })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> CriterionKind {
        self.kind
    }

    /// Stage-one proportion.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_sets(&self) -> usize {
        self.nominals.len()
    }

    /// Information of `design` under nominal set `i`, including the stage-one mix.
    pub fn info(&self, i: usize, design: &Design) -> Result<FisherInfo> {
        let nom = &self.nominals[i];
        let m2 = fisher_info(&self.spec, &nom.theta, design)?;
        Ok(FisherInfo::new(&nom.stage1 + m2.matrix * (1.0 - self.alpha)))
    }

    pub fn nominal_info(&self, design: &Design) -> Result<Vec<NominalInfo>> {
        (0..self.nominals.len())
            .map(|i| {
                let nom = &self.nominals[i];
                Ok(NominalInfo {
                    theta: nom.theta.clone(),
                    weights: nom.weights,
                    c: nom.c.clone(),
                    total: self.info(i, design)?,
                })
            })
            .collect()
    }

    /// Average criterion over the nominal sets (larger is better); `-inf` for infeasible designs.
    pub fn value(&self, design: &Design) -> f64 {
        let mut total = 0.0;
        for (i, nom) in self.nominals.iter().enumerate() {
            let v = match self.info(i, design) {
                Ok(m) => nom.weights.combine(&m, &nom.c),
                Err(_) => f64::NEG_INFINITY,
            };
            if v == f64::NEG_INFINITY {
                return v;
            }
            total += v;
        }
        total / self.nominals.len() as f64
    }

    /// Per-nominal `c^T M^- c` (the variance of the targeted endpoint).
    pub fn c_variances(&self, design: &Design) -> Result<Vec<f64>> {
        (0..self.nominals.len())
            .map(|i| Ok(phi_c(&self.info(i, design)?, &self.nominals[i].c)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EfficiencyKind {
    D,
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Efficiency {
    pub kind: EfficiencyKind,
    /// In `[0, 1]`; 0 for a singular design under D.
    pub value: f64,
    /// The design's information matrix is singular (reported as "Singular" for D).
    pub singular: bool,
    /// The raw ratio exceeded 1 and was clipped.
    pub clipped: bool,
}

/// Efficiency of `design` relative to `reference` under `theta`:
/// D: `(det M / det M*)^{1/p}`; c: `Phi_c(M*) / Phi_c(M)`.
pub fn efficiency(
    design: &Design,
    reference: &Design,
    kind: EfficiencyKind,
    spec: &ModelSpec,
    theta: &ParamVector,
) -> Result<Efficiency> {
    let m = fisher_info(spec, theta, design)?;
    let mref = fisher_info(spec, theta, reference)?;
    let singular = linalg::log_det(&m.matrix) == f64::NEG_INFINITY;
    let raw = match kind {
        EfficiencyKind::D => {
            let lref = phi_d(&mref);
            if lref == f64::NEG_INFINITY {
                return Err(Error::Singular("reference design has singular information".into()));
            }
            let l = phi_d(&m);
            if l == f64::NEG_INFINITY {
                0.0
            } else {
                ((l - lref) / spec.n_params() as f64).exp()
            }
        }
        EfficiencyKind::C => {
            let c = endpoint_gradient(theta, EndpointKind::Rd50)?;
            let vref = phi_c(&mref, &c);
            if !vref.is_finite() {
                return Err(Error::Singular("reference design cannot estimate the endpoint".into()));
            }
            vref / phi_c(&m, &c)
        }
    };
    let clipped = raw > 1.0 + 1e-12;
    if clipped {
        warn!("efficiency {raw} exceeds 1; the reference design is not optimal, clipping");
    }
    Ok(Efficiency { kind, value: raw.clamp(0.0, 1.0), singular, clipped })
}
