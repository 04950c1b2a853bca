use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::basis::{RegressionBasis, Term};
use super::{CategoryProbs, ParamVector};
use crate::error::{Error, Result};

/// Probabilities below this are treated as degenerate; the information matrix blows up there.
pub const MIN_CATEGORY_PROB: f64 = 1e-12;

/// Member of the multivariate logistic family, fixed by its `(C, L)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Link {
    /// `log(P(Y <= j) / P(Y > j))`
    CumulativeLogit,
    /// `log(pi_j / pi_{j+1})`
    AdjacentCategories,
    /// `log(pi_j / P(Y > j))`
    ContinuationRatio,
}

/// A multivariate logistic model `eta = C^T log(L pi)`, `eta = X(x) theta`, for `k` ordered
/// categories. The last linear predictor is the normalisation `log(sum pi) = 0`.
///
/// `ct` holds `C^T` (k x l) exactly as it is usually printed; `l` is the l x k
/// marginal-indicator matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    name: String,
    link: Link,
    basis: RegressionBasis,
    parallel: bool,
    k: usize,
    l: DMatrix<f64>,
    ct: DMatrix<f64>,
}

impl ModelSpec {
    /// `parallel` shares every non-constant coefficient across the `k - 1` logits (requires a
    /// constant term); otherwise each logit gets its own full set of coefficients.
    pub fn new(
        name: impl Into<String>,
        link: Link,
        basis: RegressionBasis,
        parallel: bool,
        k: usize,
    ) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid("need at least two response categories"));
        }
        if parallel && !basis.has_constant() {
            return Err(Error::invalid("a parallel-slopes model needs a constant term"));
        }
        if parallel && basis.len() < 2 {
            return Err(Error::invalid("a parallel-slopes model needs a dose term"));
        }
        let (l, ct) = link_matrices(link, k);
        Ok(Self { name: name.into(), link, basis, parallel, k, l, ct })
    }

    /// Trinomial proportional odds model with common slope, parameters `(c1, c2, b)`.
    pub fn proportional_odds() -> Self {
        Self::new("proportional-odds", Link::CumulativeLogit, RegressionBasis::linear(), true, 3)
            .expect("valid built-in spec")
    }

    /// Trinomial cumulative logit model with separate slopes, parameters `(beta1, alpha1, beta2, alpha2)`.
    pub fn cumulative_logit() -> Self {
        Self::new("cumulative-logit", Link::CumulativeLogit, RegressionBasis::linear(), false, 3)
            .expect("valid built-in spec")
    }

    pub fn adjacent_categories() -> Self {
        Self::new(
            "adjacent-categories",
            Link::AdjacentCategories,
            RegressionBasis::linear(),
            true,
            3,
        )
        .expect("valid built-in spec")
    }

    pub fn continuation_ratio() -> Self {
        Self::new(
            "continuation-ratio",
            Link::ContinuationRatio,
            RegressionBasis::linear(),
            true,
            3,
        )
        .expect("valid built-in spec")
    }

    /// Cumulative logits with `(1, x, x^2, sin 2x)` per logit: eight regression coefficients plus
    /// the normalisation constraint.
    pub fn nine_parameter() -> Self {
        Self::new(
            "nine-parameter",
            Link::CumulativeLogit,
            RegressionBasis::quadratic_sine(),
            false,
            3,
        )
        .expect("valid built-in spec")
    }

    /// Look up one of the built-in specs by name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "proportional-odds" | "po" => Ok(Self::proportional_odds()),
            "cumulative-logit" => Ok(Self::cumulative_logit()),
            "adjacent-categories" | "ac" => Ok(Self::adjacent_categories()),
            "continuation-ratio" | "cr" => Ok(Self::continuation_ratio()),
            "nine-parameter" => Ok(Self::nine_parameter()),
            other => Err(Error::invalid(format!("unknown model '{other}'"))),
        }
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &[
            "proportional-odds",
            "cumulative-logit",
            "adjacent-categories",
            "continuation-ratio",
            "nine-parameter",
        ]
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn basis(&self) -> &RegressionBasis {
        &self.basis
    }

    pub fn is_parallel(&self) -> bool {
        self.parallel
    }

    /// Number of response categories.
    pub fn n_categories(&self) -> usize {
        self.k
    }

    /// Number of free regression parameters (the normalisation constraint is not counted).
    pub fn n_params(&self) -> usize {
        if self.parallel {
            (self.k - 1) + self.basis.len() - 1
        } else {
            (self.k - 1) * self.basis.len()
        }
    }

    pub fn l_matrix(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// `C^T`, k x l.
    pub fn ct_matrix(&self) -> &DMatrix<f64> {
        &self.ct
    }

    /// `C`, l x k.
    pub fn c_matrix(&self) -> DMatrix<f64> {
        self.ct.transpose()
    }

    pub fn param_labels(&self) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.n_params());
        if self.parallel {
            for j in 1..self.k {
                labels.push(format!("c{j}"));
            }
            for t in self.basis.terms().iter().filter(|t| **t != Term::Constant) {
                labels.push(match t {
                    Term::Identity => "b".to_string(),
                    Term::Square => "gamma".to_string(),
                    Term::Sin { k } => format!("tau{k}"),
                    Term::Constant => unreachable!(),
                });
            }
        } else {
            for j in 1..self.k {
                for t in self.basis.terms() {
                    labels.push(match t {
                        Term::Constant => format!("beta{j}"),
                        Term::Identity => format!("alpha{j}"),
                        Term::Square => format!("gamma{j}"),
                        Term::Sin { .. } => format!("tau{j}"),
                    });
                }
            }
        }
        labels
    }

    /// Wrap raw values as a labelled parameter vector for this spec.
    pub fn params(&self, values: Vec<f64>) -> Result<ParamVector> {
        self.check_theta_len(values.len())?;
        ParamVector::new(values, self.param_labels())
    }

    fn check_theta_len(&self, len: usize) -> Result<()> {
        if len != self.n_params() {
            return Err(Error::Dimension(format!(
                "model '{}' has {} parameters, got {}",
                self.name,
                self.n_params(),
                len
            )));
        }
        Ok(())
    }

    /// Design matrix `X(x)`, k x p; the last row (normalisation) is zero.
    pub fn design_matrix(&self, dose: f64) -> DMatrix<f64> {
        self.build_rows(&self.basis.eval(dose), false)
    }

    /// `dX/dx`, k x p.
    pub fn design_matrix_derivative(&self, dose: f64) -> DMatrix<f64> {
        self.build_rows(&self.basis.derivative(dose), true)
    }

    fn build_rows(&self, f: &[f64], derivative: bool) -> DMatrix<f64> {
        let p = self.n_params();
        let mut x = DMatrix::zeros(self.k, p);
        if self.parallel {
            let nonconst: Vec<f64> = self
                .basis
                .terms()
                .iter()
                .zip(f)
                .filter(|(t, _)| **t != Term::Constant)
                .map(|(_, v)| *v)
                .collect();
            for j in 0..self.k - 1 {
                x[(j, j)] = if derivative { 0.0 } else { 1.0 };
                for (m, v) in nonconst.iter().enumerate() {
                    x[(j, self.k - 1 + m)] = *v;
                }
            }
        } else {
            let q = self.basis.len();
            for j in 0..self.k - 1 {
                for (m, v) in f.iter().enumerate() {
                    x[(j, j * q + m)] = *v;
                }
            }
        }
        x
    }

    /// Linear predictors `eta = X(x) theta`; the last entry is the normalisation and is zero.
    pub fn linear_predictors(&self, theta: &ParamVector, dose: f64) -> Result<DVector<f64>> {
        self.check_theta_len(theta.len())?;
        if !dose.is_finite() {
            return Err(Error::invalid(format!("dose {dose} is not finite")));
        }
        Ok(self.design_matrix(dose) * theta.as_dvector())
    }

    /// Category probabilities from the closed-form inverse of `eta = C^T log(L pi)`.
    pub fn category_probs(&self, theta: &ParamVector, dose: f64) -> Result<CategoryProbs> {
        let eta = self.linear_predictors(theta, dose)?;
        let pi = invert_link(self.link, &eta.as_slice()[..self.k - 1]);
        if let Some((i, v)) = pi
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < MIN_CATEGORY_PROB)
        {
            return Err(Error::DegenerateDose {
                dose,
                detail: format!("pi_{} = {v:e}", i + 1),
            });
        }
        Ok(CategoryProbs { pi })
    }

    /// `C^T D^{-1} L` at `pi` (k x k); its inverse maps `d eta` to `d pi`.
    fn eta_jacobian(&self, pi: &[f64]) -> DMatrix<f64> {
        let pv = DVector::from_column_slice(pi);
        let lp = &self.l * pv;
        let mut dinv_l = self.l.clone();
        for (i, mut row) in dinv_l.row_iter_mut().enumerate() {
            row /= lp[i];
        }
        &self.ct * dinv_l
    }

    /// `d pi / d theta`, k x p, with `pi` held on the simplex by the normalisation row.
    pub fn prob_jacobian(&self, theta: &ParamVector, dose: f64) -> Result<DMatrix<f64>> {
        let probs = self.category_probs(theta, dose)?;
        let a = self.eta_jacobian(&probs.pi);
        let lu = a.lu();
        lu.solve(&self.design_matrix(dose)).ok_or_else(|| Error::DegenerateDose {
            dose,
            detail: "C^T D^-1 L is singular".to_string(),
        })
    }

    /// `d pi / d x` at fixed parameters, length k.
    pub fn prob_dose_derivative(&self, theta: &ParamVector, dose: f64) -> Result<DVector<f64>> {
        let probs = self.category_probs(theta, dose)?;
        let a = self.eta_jacobian(&probs.pi);
        let deta = self.design_matrix_derivative(dose) * theta.as_dvector();
        a.lu().solve(&deta).ok_or_else(|| Error::DegenerateDose {
            dose,
            detail: "C^T D^-1 L is singular".to_string(),
        })
    }

    /// `s~(x) = X^T (C^T D^{-1} L)^{-T} V^{-1/2}`, p x k, so that the information of one
    /// observation at `dose` is `s~ s~^T`.
    pub fn stilde(&self, theta: &ParamVector, dose: f64) -> Result<DMatrix<f64>> {
        let probs = self.category_probs(theta, dose)?;
        let a = self.eta_jacobian(&probs.pi);
        let jac = a.lu().solve(&self.design_matrix(dose)).ok_or_else(|| Error::DegenerateDose {
            dose,
            detail: "C^T D^-1 L is singular".to_string(),
        })?;
        let mut s = jac.transpose();
        for (j, mut col) in s.column_iter_mut().enumerate() {
            col /= probs.pi[j].sqrt();
        }
        Ok(s)
    }

    /// Information of a single observation at `dose`, p x p.
    pub fn elemental_info(&self, theta: &ParamVector, dose: f64) -> Result<DMatrix<f64>> {
        let s = self.stilde(theta, dose)?;
        Ok(&s * s.transpose())
    }
}

/// `(L, C^T)` for `k` categories.
fn link_matrices(link: Link, k: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let km1 = k - 1;
    match link {
        Link::CumulativeLogit | Link::ContinuationRatio => {
            // rows: numerators (k-1), denominators (k-1), total
            let l_rows = 2 * km1 + 1;
            let mut l = DMatrix::zeros(l_rows, k);
            for j in 0..km1 {
                for i in 0..k {
                    let num = match link {
                        Link::CumulativeLogit => i <= j,
                        _ => i == j,
                    };
                    if num {
                        l[(j, i)] = 1.0;
                    }
                    if i > j {
                        l[(km1 + j, i)] = 1.0;
                    }
                }
            }
            for i in 0..k {
                l[(l_rows - 1, i)] = 1.0;
            }
            let mut ct = DMatrix::zeros(k, l_rows);
            for j in 0..km1 {
                ct[(j, j)] = 1.0;
                ct[(j, km1 + j)] = -1.0;
            }
            ct[(k - 1, l_rows - 1)] = 1.0;
            (l, ct)
        }
        Link::AdjacentCategories => {
            let mut l = DMatrix::zeros(k + 1, k);
            for i in 0..k {
                l[(i, i)] = 1.0;
                l[(k, i)] = 1.0;
            }
            let mut ct = DMatrix::zeros(k, k + 1);
            for j in 0..km1 {
                ct[(j, j)] = 1.0;
                ct[(j, j + 1)] = -1.0;
            }
            ct[(k - 1, k)] = 1.0;
            (l, ct)
        }
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Probabilities from the `k - 1` free linear predictors.
fn invert_link(link: Link, eta: &[f64]) -> Vec<f64> {
    let k = eta.len() + 1;
    let mut pi = vec![0.0; k];
    match link {
        Link::CumulativeLogit => {
            let mut prev = 0.0;
            for j in 0..k - 1 {
                let cum = logistic(eta[j]);
                pi[j] = cum - prev;
                prev = cum;
            }
            pi[k - 1] = 1.0 - prev;
        }
        Link::AdjacentCategories => {
            // log pi_j - log pi_{j+1} = eta_j, anchored at pi_k
            let mut logs = vec![0.0; k];
            for j in (0..k - 1).rev() {
                logs[j] = logs[j + 1] + eta[j];
            }
            let m = logs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let z: f64 = logs.iter().map(|v| (v - m).exp()).sum();
            for j in 0..k {
                pi[j] = (logs[j] - m).exp() / z;
            }
        }
        Link::ContinuationRatio => {
            let mut remaining = 1.0;
            for j in 0..k - 1 {
                pi[j] = remaining * logistic(eta[j]);
                remaining *= 1.0 - logistic(eta[j]);
            }
            pi[k - 1] = remaining;
        }
    }
    pi
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trinomial(c1: f64, c2: f64, b: f64) -> ParamVector {
        ModelSpec::proportional_odds().params(vec![c1, c2, b]).unwrap()
    }

    #[test]
    fn printed_trinomial_matrices() {
        let spec = ModelSpec::proportional_odds();
        let l = DMatrix::from_row_slice(
            5,
            3,
            &[1., 0., 0., 1., 1., 0., 0., 1., 1., 0., 0., 1., 1., 1., 1.],
        );
        let ct = DMatrix::from_row_slice(
            3,
            5,
            &[1., 0., -1., 0., 0., 0., 1., 0., -1., 0., 0., 0., 0., 0., 1.],
        );
        assert_eq!(spec.l_matrix(), &l);
        assert_eq!(spec.ct_matrix(), &ct);
        assert_eq!(spec.c_matrix().shape(), (5, 3));
        assert_eq!(spec.n_params(), 3);
        assert_eq!(spec.param_labels(), vec!["c1", "c2", "b"]);
    }

    #[test]
    fn zero_parameters_give_zero_predictors() {
        let spec = ModelSpec::proportional_odds();
        let eta = spec.linear_predictors(&trinomial(0.0, 0.0, 0.0), 3.7).unwrap();
        assert_eq!(eta.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn predictors_at_zero_dose_are_intercepts() {
        let spec = ModelSpec::proportional_odds();
        let eta = spec.linear_predictors(&trinomial(2.506, 7.800, -0.979), 0.0).unwrap();
        assert_eq!(eta.as_slice(), &[2.506, 7.800, 0.0]);
    }

    #[test]
    fn predictors_at_unit_dose() {
        let spec = ModelSpec::proportional_odds();
        let eta = spec.linear_predictors(&trinomial(2.328, 9.845, -1.562), 1.0).unwrap();
        assert!((eta[0] - 0.766).abs() < 1e-12);
        assert!((eta[1] - 8.283).abs() < 1e-12);
        assert_eq!(eta[2], 0.0);
    }

    #[test]
    fn wrong_theta_length_is_a_dimension_error() {
        let spec = ModelSpec::proportional_odds();
        let theta = ParamVector::new(vec![1.0, 2.0], vec!["a".into(), "b".into()]).unwrap();
        assert!(matches!(spec.linear_predictors(&theta, 0.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn equal_intercepts_are_degenerate() {
        let spec = ModelSpec::proportional_odds();
        let err = spec.category_probs(&trinomial(0.0, 0.0, 0.0), 1.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateDose { .. }));
    }

    #[test]
    fn trinomial_probs_are_cumulative_logistic() {
        let spec = ModelSpec::proportional_odds();
        let pi = spec.category_probs(&trinomial(2.328, 9.845, -1.562), 3.0).unwrap().pi;
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let g1 = s(2.328 - 4.686);
        let g2 = s(9.845 - 4.686);
        assert!((pi[0] - g1).abs() < 1e-15);
        assert!((pi[1] - (g2 - g1)).abs() < 1e-15);
        assert!((pi[2] - (1.0 - g2)).abs() < 1e-15);
    }

    #[test]
    fn link_inverse_solves_the_forward_map() {
        // eta = C^T log(L pi) must reproduce the predictors for every shipped link.
        for spec in [
            ModelSpec::proportional_odds(),
            ModelSpec::adjacent_categories(),
            ModelSpec::continuation_ratio(),
            ModelSpec::nine_parameter(),
        ] {
            let theta = match spec.n_params() {
                3 => spec.params(vec![0.4, 2.1, -0.6]).unwrap(),
                _ => spec
                    .params(vec![0.5, -0.4, 0.02, 0.1, 2.5, -0.5, 0.03, -0.2])
                    .unwrap(),
            };
            for &x in &[0.0, 1.0, 2.5, 5.0] {
                let eta = spec.linear_predictors(&theta, x).unwrap();
                let pi = DVector::from_vec(spec.category_probs(&theta, x).unwrap().pi);
                let lp = spec.l_matrix() * pi;
                let back = spec.ct_matrix() * lp.map(f64::ln);
                assert!((back - eta).norm() < 1e-12, "{} at {x}", spec.name());
            }
        }
    }

    #[test]
    fn stilde_shape_follows_model_dimensions() {
        let spec = ModelSpec::nine_parameter();
        let theta = spec
            .params(vec![0.5, -0.4, 0.02, 0.1, 2.5, -0.5, 0.03, -0.2])
            .unwrap();
        let s = spec.stilde(&theta, 1.0).unwrap();
        assert_eq!(s.shape(), (spec.n_params(), spec.n_categories()));
        assert_eq!(s.shape(), (8, 3));
    }

    #[test]
    fn unknown_spec_name() {
        assert!(ModelSpec::by_name("cauchit").is_err());
        for name in ModelSpec::builtin_names() {
            assert_eq!(ModelSpec::by_name(name).unwrap().name(), *name);
        }
    }
}
