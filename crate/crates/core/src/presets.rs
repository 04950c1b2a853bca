//! Reference nominal values for the sea-urchin case study and the efficacy-toxicity scenario.
//! Slopes are stored with their sign (negative: the normal category shrinks with dose).

use crate::design::{Design, FixedArm};
use crate::model::{DoseScale, ModelSpec, ParamVector};
use crate::probit::BpParams;

fn po(values: [f64; 3]) -> ParamVector {
    ModelSpec::proportional_odds().params(values.to_vec()).expect("three finite values")
}

/// Proportional odds fit pooled over all nine days of the first dataset.
pub fn pooled_fit() -> ParamVector {
    po([2.506, 7.800, -0.979])
}

/// Proportional odds fit of the December dataset.
pub fn december_fit() -> ParamVector {
    po([0.593, 6.106, -0.719])
}

/// Day-wise proportional odds fits for the nine experiment days of the first dataset (06/23
/// through 08/19): the nominal sets used by the robust designs.
pub fn daily_fits() -> Vec<ParamVector> {
    [
        [2.328, 9.845, -1.562],
        [2.077, 10.686, -1.303],
        [2.157, 9.342, -1.019],
        [2.516, 9.127, -1.086],
        [2.186, 8.029, -0.960],
        [2.380, 8.359, -1.040],
        [2.442, 8.331, -1.037],
        [2.449, 8.121, -1.021],
        [2.506, 7.800, -0.979],
    ]
    .into_iter()
    .map(po)
    .collect()
}

/// Standard fixed arms: a control at dose 0 and a lethal arm at raw dose 10000, each with
/// `weight`.
pub fn control_and_lethal_arms(weight: f64) -> Vec<FixedArm> {
    vec![
        FixedArm { dose: 0.0, weight },
        FixedArm { dose: DoseScale::Log1p.transform(10000.0), weight },
    ]
}

fn raw_design(raw: &[f64], weights: &[f64]) -> Design {
    Design {
        points: raw.iter().map(|d| DoseScale::Log1p.transform(*d)).collect(),
        weights: weights.to_vec(),
        fixed_arms: Vec::new(),
    }
}

/// Reported locally D-optimal design under the pooled fit (raw doses 5.77, 161.4, 4391.52).
pub fn reported_d_optimal() -> Design {
    raw_design(&[5.77, 161.4, 4391.52], &[1.0 / 3.0; 3])
}

/// Reported dual-optimal design (lambda = 0.5) under the pooled fit.
pub fn reported_dual_optimal() -> Design {
    raw_design(&[9.08, 59.7, 4290.0], &[0.65, 0.175, 0.175])
}

/// Reported one-point c-optimal design for RD50 under the pooled fit.
pub fn reported_c_optimal() -> Design {
    raw_design(&[12.01], &[1.0])
}

/// Dose allocation used on 06/23 of the first dataset.
pub fn june_23_design() -> Design {
    raw_design(&[0.0, 1.0, 5.0, 10.0, 30.0, 100.0], &[0.16, 0.17, 0.17, 0.19, 0.17, 0.16])
}

/// Reported two-stage robust D-optimal design (fixed arms 0.225 at 0 and 10000).
pub fn reported_robust_d() -> Design {
    let mut d = raw_design(&[14.0, 55.0, 683.0, 4808.0], &[0.145, 0.112, 0.151, 0.142]);
    d.fixed_arms = control_and_lethal_arms(0.225);
    d
}

/// Reported two-stage robust dual-optimal design (fixed arms 0.215 at 0 and 10000).
pub fn reported_robust_dual() -> Design {
    let mut d = raw_design(&[5.0, 25.0, 989.0, 3727.0], &[0.200, 0.305, 0.033, 0.032]);
    d.fixed_arms = control_and_lethal_arms(0.215);
    d
}

/// Efficacy-toxicity bivariate probit nominal values: efficacy `(-0.9, 1.9)`, toxicity
/// `(-3.98, 3)`, correlation 0.5.
pub fn bp_reference_params() -> BpParams {
    BpParams::new([-0.9, 1.9], [-3.98, 3.0], 0.5).expect("valid correlation")
}

/// Uniform five-point design on doses 0.2, 0.5, 0.8, 1.1, 1.4.
pub fn bp_uniform_design() -> Design {
    Design::uniform(vec![0.2, 0.5, 0.8, 1.1, 1.4]).expect("non-empty")
}
