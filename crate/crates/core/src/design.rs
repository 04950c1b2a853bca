//! Approximate designs: support points with weights on a simplex, plus optional fixed arms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a design.
pub const MASS_TOL: f64 = 1e-9;

/// Support points closer than this are merged.
pub const MERGE_TOL: f64 = 1e-6;

/// An arm whose dose and weight are fixed in advance (e.g. a control or a lethal high dose).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedArm {
    /// Transformed-scale dose.
    pub dose: f64,
    pub weight: f64,
}

/// Approximate design on the transformed dose scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub fixed_arms: Vec<FixedArm>,
}

impl Design {
    /// Validated design; total mass of free and fixed weights must be 1.
    pub fn new(points: Vec<f64>, weights: Vec<f64>, fixed_arms: Vec<FixedArm>) -> Result<Self> {
        let d = Self { points, weights, fixed_arms };
        d.validate()?;
        Ok(d)
    }

    /// Equal weights on `points`, no fixed arms.
    pub fn uniform(points: Vec<f64>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::EmptyInput("design has no support points".into()));
        }
        Self::new(points, vec![1.0 / n as f64; n], Vec::new())
    }

    /// One-point design.
    pub fn single(point: f64) -> Self {
        Self { points: vec![point], weights: vec![1.0], fixed_arms: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.weights.len() {
            return Err(Error::Dimension(format!(
                "{} points but {} weights",
                self.points.len(),
                self.weights.len()
            )));
        }
        if self.points.is_empty() && self.fixed_arms.is_empty() {
            return Err(Error::EmptyInput("design has no support points".into()));
        }
        for (x, w) in self.all_points() {
            if !x.is_finite() {
                return Err(Error::invalid(format!("design point {x} is not finite")));
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::invalid(format!("design weight {w} is negative or not finite")));
            }
        }
        let total = self.total_mass();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::invalid(format!("design weights sum to {total}, expected 1")));
        }
        Ok(())
    }

    pub fn free_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn fixed_mass(&self) -> f64 {
        self.fixed_arms.iter().map(|a| a.weight).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.free_mass() + self.fixed_mass()
    }

    /// Free points followed by fixed arms, as `(dose, weight)`.
    pub fn all_points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
            .chain(self.fixed_arms.iter().map(|a| (a.dose, a.weight)))
    }

    /// The free part rescaled to a probability measure (fixed arms dropped).
    pub fn free_part(&self) -> Result<Design> {
        let mass = self.free_mass();
        if !(mass > 0.0) {
            return Err(Error::invalid("design has no free mass"));
        }
        Ok(Design {
            points: self.points.clone(),
            weights: self.weights.iter().map(|w| w / mass).collect(),
            fixed_arms: Vec::new(),
        })
    }

    /// The fixed arms rescaled to a probability measure.
    pub fn fixed_part(&self) -> Option<Design> {
        let mass = self.fixed_mass();
        if !(mass > 0.0) {
            return None;
        }
        Some(Design {
            points: self.fixed_arms.iter().map(|a| a.dose).collect(),
            weights: self.fixed_arms.iter().map(|a| a.weight / mass).collect(),
            fixed_arms: Vec::new(),
        })
    }

    /// Sort free points, merge those within `tol` (weight-averaged location) and drop zero weights.
    pub fn merged(&self, tol: f64) -> Design {
        let mut pairs: Vec<(f64, f64)> = self
            .points
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
            .filter(|(_, w)| *w > 0.0)
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
        for (x, w) in pairs {
            match out.last_mut() {
                Some(last) if (x - last.0).abs() <= tol => {
                    let tw = last.1 + w;
                    last.0 = (last.0 * last.1 + x * w) / tw;
                    last.1 = tw;
                }
                _ => out.push((x, w)),
            }
        }
        Design {
            points: out.iter().map(|p| p.0).collect(),
            weights: out.iter().map(|p| p.1).collect(),
            fixed_arms: self.fixed_arms.clone(),
        }
    }

    /// Sorted free points with their weights.
    pub fn sorted(&self) -> Design {
        let mut idx: Vec<usize> = (0..self.points.len()).collect();
        idx.sort_by(|&a, &b| self.points[a].total_cmp(&self.points[b]));
        Design {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            weights: idx.iter().map(|&i| self.weights[i]).collect(),
            fixed_arms: self.fixed_arms.clone(),
        }
    }

    /// Integer allocation of `n` subjects over all arms (free points, then fixed arms) in
    /// proportion to their weights, by largest remainder.
    pub fn allocate(&self, n: u64) -> Vec<(f64, u64)> {
        let pts: Vec<(f64, f64)> = self.all_points().collect();
        let mass: f64 = pts.iter().map(|p| p.1).sum();
        if pts.is_empty() || !(mass > 0.0) {
            return Vec::new();
        }
        let raw: Vec<f64> = pts.iter().map(|p| p.1 / mass * n as f64).collect();
        let mut counts: Vec<u64> = raw.iter().map(|r| r.floor() as u64).collect();
        let mut left = n.saturating_sub(counts.iter().sum::<u64>());
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())));
        for i in order.into_iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        pts.iter().zip(counts).map(|(p, c)| (p.0, c)).collect()
    }

    /// `(1 - alpha) self + alpha other` as a single measure; fixed arms of both are kept.
    pub fn mixture(&self, other: &Design, alpha: f64) -> Design {
        let mut points = self.points.clone();
        let mut weights: Vec<f64> = self.weights.iter().map(|w| w * (1.0 - alpha)).collect();
        points.extend_from_slice(&other.points);
        weights.extend(other.weights.iter().map(|w| w * alpha));
        let mut fixed_arms: Vec<FixedArm> = self
            .fixed_arms
            .iter()
            .map(|a| FixedArm { dose: a.dose, weight: a.weight * (1.0 - alpha) })
            .collect();
        fixed_arms.extend(other.fixed_arms.iter().map(|a| FixedArm {
            dose: a.dose,
            weight: a.weight * alpha,
        }));
        Design { points, weights, fixed_arms }
    }
}
