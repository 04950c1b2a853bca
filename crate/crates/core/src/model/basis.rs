use serde::{Deserialize, Serialize};

/// One scalar regressor as a function of (transformed) dose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Term {
    Constant,
    Identity,
    Square,
    /// `sin(k x)`
    Sin { k: i32 },
}

impl Term {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Term::Constant => 1.0,
            Term::Identity => x,
            Term::Square => x * x,
            Term::Sin { k } => (k as f64 * x).sin(),
        }
    }

    /// d/dx of the term.
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Term::Constant => 0.0,
            Term::Identity => 1.0,
            Term::Square => 2.0 * x,
            Term::Sin { k } => k as f64 * (k as f64 * x).cos(),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Term::Constant => "1".to_string(),
            Term::Identity => "x".to_string(),
            Term::Square => "x^2".to_string(),
            Term::Sin { k } => format!("sin({k}x)"),
        }
    }
}

/// Ordered regressors `f(x)` shared by every linear predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionBasis {
    terms: Vec<Term>,
}

impl RegressionBasis {
    /// Returns `None` for an empty term list.
    pub fn new(terms: Vec<Term>) -> Option<Self> {
        if terms.is_empty() {
            None
        } else {
            Some(Self { terms })
        }
    }

    /// `(1, x)`
    pub fn linear() -> Self {
        Self { terms: vec![Term::Constant, Term::Identity] }
    }

    /// `(1, x, x^2, sin 2x)`
    pub fn quadratic_sine() -> Self {
        Self {
            terms: vec![Term::Constant, Term::Identity, Term::Square, Term::Sin { k: 2 }],
        }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn has_constant(&self) -> bool {
        self.terms.contains(&Term::Constant)
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        self.terms.iter().map(|t| t.eval(x)).collect()
    }

    pub fn derivative(&self, x: f64) -> Vec<f64> {
        self.terms.iter().map(|t| t.derivative(x)).collect()
    }
}
