//! Multivariate logistic dose-response models and their Fisher information.

mod basis;
mod spec;

pub use basis::{RegressionBasis, Term};
pub use spec::{Link, ModelSpec, MIN_CATEGORY_PROB};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};

/// A labelled parameter vector; used as a nominal value set by the design criteria.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    labels: Vec<String>,
}

/// Nominal parameter values treated as the truth for a locally optimal design.
pub type NominalSet = ParamVector;

impl ParamVector {
    pub fn new(values: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if values.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} values but {} labels",
                values.len(),
                labels.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("parameter value {v} is not finite")));
        }
        Ok(Self { values, labels })
    }

    /// Unlabelled vector; labels default to `theta1..thetap`.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let labels = (1..=values.len()).map(|i| format!("theta{i}")).collect();
        Self::new(values, labels)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    /// Same labels, new values (which must be finite and of equal length).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.labels.clone())
    }
}

/// Category probabilities at one dose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryProbs {
    pub pi: Vec<f64>,
}

/// Fisher information of a design, `M = sum_i w_i s~(x_i) s~(x_i)^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherInfo {
    pub matrix: DMatrix<f64>,
    /// Per-observation (weights sum to one) rather than scaled by a sample size.
    pub normalized: bool,
}

impl FisherInfo {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self { matrix, normalized: true }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `(1 - alpha) self + alpha other`.
    pub fn mix(&self, other: &FisherInfo, alpha: f64) -> Result<FisherInfo> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension(format!(
                "cannot mix {}x{} and {}x{} information matrices",
                self.dim(),
                self.dim(),
                other.dim(),
                other.dim()
            )));
        }
        Ok(FisherInfo::new(&self.matrix * (1.0 - alpha) + &other.matrix * alpha))
    }
}

/// Dose scale used by the models. Optimisation always runs on the transformed scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DoseScale {
    #[default]
    Log1p,
    Identity,
}

impl DoseScale {
    pub fn transform(self, raw: f64) -> f64 {
        match self {
            DoseScale::Log1p => raw.ln_1p(),
            DoseScale::Identity => raw,
        }
    }

    pub fn inverse(self, transformed: f64) -> f64 {
        match self {
            DoseScale::Log1p => transformed.exp_m1(),
            DoseScale::Identity => transformed,
        }
    }
}

/// Fisher information of `design` (free points and fixed arms) under `theta`.
pub fn fisher_info(spec: &ModelSpec, theta: &ParamVector, design: &Design) -> Result<FisherInfo> {
    let p = spec.n_params();
    let mut m = DMatrix::zeros(p, p);
    for (x, w) in design.all_points() {
        if w == 0.0 {
            continue;
        }
        let s = spec.stilde(theta, x)?;
        m.gemm(w, &s, &s.transpose(), 1.0);
    }
    Ok(FisherInfo::new(crate::linalg::symmetrize(&m)))
}
