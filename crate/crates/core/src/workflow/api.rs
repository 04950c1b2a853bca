//! Request and response documents shared by the command line and the HTTP service, so both
//! produce identical JSON for identical input.

use serde::{Deserialize, Serialize};

use super::{default_grid_points, default_model, default_range, default_tolerance, CriterionChoice, DesignReport, RawArm, VerificationSummary};
use crate::criteria::{efficiency, Efficiency, EfficiencyKind, Evaluator, StageOne};
use crate::design::Design;
use crate::equivalence::{self, GridSpec, SensitivityCurve};
use crate::error::{Error, Result};
use crate::fitting::{endpoint_variance, fit_mle, to_dose_counts, EndpointEstimate, EndpointKind, FitResult, SpreadMatrix};
use crate::model::{DoseScale, ModelSpec, ParamVector};
use crate::probit::{self, BpCriterion, BpParams, BpTargets};
use crate::pso::{self, SwarmConfig};

/// Design on the raw dose scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDesign {
    pub doses: Vec<f64>,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub fixed_arms: Vec<RawArm>,
}

impl RawDesign {
    pub fn to_design(&self, scale: DoseScale) -> Result<Design> {
        if self.doses.iter().chain(self.fixed_arms.iter().map(|a| &a.dose)).any(|d| !(*d >= 0.0)) {
            return Err(Error::invalid("doses must be non-negative"));
        }
        Design::new(
            self.doses.iter().map(|d| scale.transform(*d)).collect(),
            self.weights.clone(),
            self.fixed_arms.iter().map(|a| a.to_arm(scale)).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawStageOne {
    pub design: RawDesign,
    pub alpha: f64,
}

fn model_and_sets(model: &str, sets: &[Vec<f64>]) -> Result<(ModelSpec, Vec<ParamVector>)> {
    let spec = ModelSpec::by_name(model)?;
    if sets.is_empty() {
        return Err(Error::invalid("at least one nominal set is required"));
    }
    let sets = sets.iter().map(|v| spec.params(v.clone())).collect::<Result<Vec<_>>>()?;
    Ok((spec, sets))
}

/// Rejects nominal sets that give no valid category probabilities anywhere on the dose box.
fn check_sets_usable(model: &str, sets: &[Vec<f64>], dose_box: [f64; 2]) -> Result<()> {
    let (spec, sets) = model_and_sets(model, sets)?;
    for (i, theta) in sets.iter().enumerate() {
        let usable = (0..=64).any(|j| {
            let x = dose_box[0] + (dose_box[1] - dose_box[0]) * j as f64 / 64.0;
            spec.category_probs(theta, x).is_ok()
        });
        if !usable {
            return Err(Error::invalid(format!(
                "nominal set {} gives invalid category probabilities over the whole dose range",
                i + 1
            )));
        }
    }
    Ok(())
}

fn evaluator(
    model: &str,
    scale: DoseScale,
    criterion: &CriterionChoice,
    sets: &[Vec<f64>],
    stage1: &Option<RawStageOne>,
) -> Result<Evaluator> {
    let (spec, sets) = model_and_sets(model, sets)?;
    let mut crit = criterion.build(sets);
    if let Some(s1) = stage1 {
        crit.stage1 = Some(StageOne { design: s1.design.to_design(scale)?, alpha: s1.alpha });
    }
    Evaluator::new(&spec, &crit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRequest {
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub transform: DoseScale,
    pub criterion: CriterionChoice,
    pub nominal_sets: Vec<Vec<f64>>,
    #[serde(default)]
    pub fixed_arms: Vec<RawArm>,
    #[serde(default)]
    pub stage1: Option<RawStageOne>,
    #[serde(default = "default_range")]
    pub dose_range: [f64; 2],
    #[serde(default)]
    pub pso: SwarmConfig,
    #[serde(default = "yes")]
    pub verify: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResponse {
    pub design: DesignReport,
    pub verification: Option<VerificationSummary>,
    pub evaluations: usize,
}

/// Optimal (or robust) design for the request, with an optional equivalence summary.
pub fn design_request(req: &DesignRequest) -> Result<DesignResponse> {
    let ev = evaluator(&req.model, req.transform, &req.criterion, &req.nominal_sets, &req.stage1)?;
    let [lo, hi] = req.dose_range;
    if !(lo >= 0.0 && lo < hi) {
        return Err(Error::invalid(format!("dose range [{lo}, {hi}] is invalid")));
    }
    let dose_box = req.dose_range.map(|d| req.transform.transform(d));
    check_sets_usable(&req.model, &req.nominal_sets, dose_box)?;
    let swarm = SwarmConfig { dose_box, ..req.pso.clone() };
    let arms: Vec<_> = req.fixed_arms.iter().map(|a| a.to_arm(req.transform)).collect();
    let r = pso::optimize(&|d: &Design| ev.value(d), &swarm, &arms)?;
    if !r.value.is_finite() {
        return Err(Error::Optimizer("no design with finite criterion found".into()));
    }
    let verification = if req.verify {
        let grid = GridSpec { lo: dose_box[0], hi: dose_box[1], n: default_grid_points() };
        let v = equivalence::verify_design(&ev, &r.design, &grid, default_tolerance())?;
        Some(VerificationSummary::new(&v, req.transform))
    } else {
        None
    };
    Ok(DesignResponse {
        design: DesignReport::new(&r.design, req.transform, req.criterion.label(ev.n_sets()), r.value),
        verification,
        evaluations: r.evaluations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRequest {
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub transform: DoseScale,
    pub criterion: CriterionChoice,
    pub nominal_sets: Vec<Vec<f64>>,
    pub design: RawDesign,
    #[serde(default)]
    pub stage1: Option<RawStageOne>,
    /// Grid on the transformed scale.
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyResponse {
    pub summary: VerificationSummary,
    pub value: f64,
    pub support_values: Vec<f64>,
    pub curve: SensitivityCurve,
}

pub fn verify_request(req: &VerifyRequest) -> Result<VerifyResponse> {
    let ev = evaluator(&req.model, req.transform, &req.criterion, &req.nominal_sets, &req.stage1)?;
    let design = req.design.to_design(req.transform)?;
    let grid = req.grid.unwrap_or_else(|| {
        let [lo, hi] = default_range().map(|d| req.transform.transform(d));
        GridSpec { lo, hi, n: default_grid_points() }
    });
    let v = equivalence::verify_design(&ev, &design, &grid, req.tolerance)?;
    Ok(VerifyResponse {
        summary: VerificationSummary::new(&v, req.transform),
        value: ev.value(&design),
        support_values: v.support_values.clone(),
        curve: v.curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRequest {
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub transform: DoseScale,
    pub theta: Vec<f64>,
    pub design: RawDesign,
    pub reference: RawDesign,
    pub kind: EfficiencyKind,
}

pub fn efficiency_request(req: &EfficiencyRequest) -> Result<Efficiency> {
    let spec = ModelSpec::by_name(&req.model)?;
    let theta = spec.params(req.theta.clone())?;
    let d = req.design.to_design(req.transform)?;
    let r = req.reference.to_design(req.transform)?;
    efficiency(&d, &r, req.kind, &spec, &theta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResponse {
    pub fit: FitResult,
    /// Delta-method endpoint estimates (trinomial three-parameter models only).
    pub endpoints: Vec<EndpointEstimate>,
}

/// Fits `model` to count-CSV text.
pub fn fit_csv_text(model: &str, transform: DoseScale, csv_text: &str) -> Result<FitResponse> {
    let spec = ModelSpec::by_name(model)?;
    let records = super::read_records(csv_text.as_bytes())?;
    let fit = fit_mle(&spec, &to_dose_counts(&records, transform))?;
    let mut endpoints = Vec::new();
    if fit.theta_hat.len() == 3 && spec.n_categories() == 3 {
        let cov = fit.cov_matrix();
        for kind in [EndpointKind::Rd50, EndpointKind::Ld50, EndpointKind::Ratio] {
            if let Ok(e) = endpoint_variance(&fit.theta_hat, &cov, SpreadMatrix::Covariance, kind) {
                endpoints.push(e);
            }
        }
    }
    Ok(FitResponse { fit, endpoints })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpDesignRequest {
    pub params: BpParams,
    pub targets: BpTargets,
    pub criterion: BpCriterion,
    #[serde(default = "probit::default_bp_box")]
    pub dose_box: [f64; 2],
    #[serde(default)]
    pub pso: SwarmConfig,
    #[serde(default)]
    pub stage1: Option<BpStageOne>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpStageOne {
    pub design: Design,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpDesignResponse {
    pub design: Design,
    /// Criterion minimised by the search (penalised when CE or CT is positive).
    pub value: f64,
    /// `-log det M` and `L^T M^{-1} L` of the (combined) design without penalty.
    pub d_value: f64,
    pub l_value: f64,
    pub x_star: f64,
}

pub fn bp_design_request(req: &BpDesignRequest) -> Result<BpDesignResponse> {
    if let Some(s1) = &req.stage1 {
        if !(s1.alpha > 0.0 && s1.alpha < 1.0) {
            return Err(Error::invalid(format!("stage-one alpha {} must lie in (0, 1)", s1.alpha)));
        }
    }
    let swarm = SwarmConfig { dose_box: req.dose_box, ..req.pso.clone() };
    let stage1 = req.stage1.as_ref().map(|s| (&s.design, s.alpha));
    let r = probit::bp_design(&req.params, &req.targets, req.criterion, &swarm, stage1)?;
    if !r.value.is_finite() {
        return Err(Error::Optimizer("no design with finite criterion found".into()));
    }
    let combined = match stage1 {
        Some((s1, a)) => s1.mixture(&r.design, 1.0 - a),
        None => r.design.clone(),
    };
    let plain = req.targets.unpenalized();
    Ok(BpDesignResponse {
        value: r.value,
        d_value: probit::penalized_criterion(&combined, &req.params, &plain, BpCriterion::D)?,
        l_value: probit::penalized_criterion(&combined, &req.params, &plain, BpCriterion::L)?,
        x_star: probit::x_star(&req.params, &req.targets)?,
        design: r.design,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workflow::Objective;

    #[test]
    fn raw_design_rejects_negative_dose() {
        let d = RawDesign { doses: vec![-1.0], weights: vec![1.0], fixed_arms: vec![] };
        assert!(d.to_design(DoseScale::Log1p).is_err());
    }

    #[test]
    fn verify_one_point_c_design() {
        let rd50_raw = crate::fitting::rd50(&crate::presets::pooled_fit()).unwrap().exp_m1();
        let req = VerifyRequest {
            model: "proportional-odds".into(),
            transform: DoseScale::Log1p,
            criterion: CriterionChoice::new(Objective::C),
            nominal_sets: vec![vec![2.506, 7.8, -0.979]],
            design: RawDesign { doses: vec![rd50_raw], weights: vec![1.0], fixed_arms: vec![] },
            stage1: None,
            grid: Some(GridSpec { lo: 0.0, hi: 30001f64.ln(), n: 201 }),
            tolerance: 1e-3,
        };
        let r = verify_request(&req).unwrap();
        assert!(r.summary.generalized_inverse);
        assert_eq!(r.curve.grid.len(), 201);
    }

    #[test]
    fn fit_from_text_reports_endpoints() {
        let spec = ModelSpec::proportional_odds();
        let theta = crate::presets::pooled_fit();
        let mut csv = String::from("date,dose,duration,observed,normal,radial,0 spicules,dead/delayed\n");
        for dose in [0.0, 5.0, 10.0, 30.0, 100.0, 1000.0] {
            let pi = spec.category_probs(&theta, DoseScale::Log1p.transform(dose)).unwrap().pi;
            let n: Vec<u64> = pi.iter().map(|p| (p * 1000.0).round() as u64).collect();
            csv += &format!("d,{dose},1-24h,{},{},{},0,{}\n", n.iter().sum::<u64>(), n[0], n[1], n[2]);
        }
        let r = fit_csv_text("proportional-odds", DoseScale::Log1p, &csv).unwrap();
        assert_eq!(r.endpoints.len(), 3);
        assert!(r.fit.converged);
    }
}
