use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DoseScale;

/// One experimental row: embryo counts by outcome at a single dose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub date: String,
    /// Raw dose (mg/cm^3).
    pub dose: f64,
    pub duration: String,
    pub observed: u64,
    pub normal: u64,
    pub radial: u64,
    pub zero_spicules: u64,
    pub dead_delayed: u64,
}

impl CountRecord {
    /// Everything that is neither normal nor radialized (0 spicules, dead/delayed, unrecorded).
    pub fn other_abnormal(&self) -> u64 {
        self.observed.saturating_sub(self.normal + self.radial)
    }

    /// Counts for the three ordered categories (normal, radial, other).
    pub fn trinomial_counts(&self) -> [u64; 3] {
        [self.normal, self.radial, self.other_abnormal()]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dose >= 0.0) || !self.dose.is_finite() {
            return Err(Error::invalid(format!("dose {} must be finite and >= 0", self.dose)));
        }
        if self.normal + self.radial > self.observed {
            return Err(Error::invalid(format!(
                "normal ({}) + radial ({}) exceeds observed ({})",
                self.normal, self.radial, self.observed
            )));
        }
        let listed = self.zero_spicules + self.dead_delayed;
        if listed > self.other_abnormal() {
            return Err(Error::invalid(format!(
                "0 spicules ({}) + dead/delayed ({}) exceeds observed - normal - radial ({})",
                self.zero_spicules,
                self.dead_delayed,
                self.other_abnormal()
            )));
        }
        Ok(())
    }
}

/// Counts at one transformed dose, ready for likelihood evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseCounts {
    pub x: f64,
    pub counts: Vec<u64>,
}

impl DoseCounts {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Convert records to per-row trinomial counts on the chosen dose scale.
pub fn to_dose_counts(records: &[CountRecord], scale: DoseScale) -> Vec<DoseCounts> {
    records
        .iter()
        .map(|r| DoseCounts { x: scale.transform(r.dose), counts: r.trinomial_counts().to_vec() })
        .collect()
}
