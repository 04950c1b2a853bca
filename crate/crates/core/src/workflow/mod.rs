//! End-to-end two-stage scheme: stage-one counts in, per-group fits as nominal sets, a robust
//! stage-two design with fixed arms, its equivalence check, and the report files.

mod api;
mod csv_io;

pub use api::*;
pub use csv_io::{ingest_csv, read_records, write_csv, CANONICAL_HEADER};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::criteria::{ComponentWeights, CriterionKind, CriterionSpec, Evaluator, StageOne};
use crate::design::{Design, FixedArm};
use crate::equivalence::{self, GridSpec, Verdict, DEFAULT_TOLERANCE};
use crate::error::{Error, Result};
use crate::fitting::{fit_mle, to_dose_counts, CountRecord, EndpointKind, FitResult};
use crate::model::{DoseScale, ModelSpec, ParamVector};
use crate::pso::{self, SwarmConfig};

/// Default weight of each of the control and lethal arms in stage two.
pub const DEFAULT_ARM_WEIGHT: f64 = 0.225;

/// Raw dose of the default lethal arm.
pub const LETHAL_DOSE: f64 = 10000.0;

/// Default raw dose range searched for stage-two points.
pub const DEFAULT_DOSE_RANGE: [f64; 2] = [0.0, 30000.0];

/// Criterion family; it becomes the robust version when more than one nominal set is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    D,
    C,
    A,
    Dual,
    Multiple,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionChoice {
    pub kind: Objective,
    /// D weight of the dual and multiple criteria.
    #[serde(default = "half")]
    pub lambda: f64,
    /// A weight of the multiple criterion.
    #[serde(default)]
    pub lambda_a: f64,
    #[serde(default = "rd50")]
    pub endpoint: EndpointKind,
}

fn half() -> f64 {
    0.5
}

fn rd50() -> EndpointKind {
    EndpointKind::Rd50
}

impl CriterionChoice {
    pub fn new(kind: Objective) -> Self {
        Self { kind, lambda: 0.5, lambda_a: 0.0, endpoint: EndpointKind::Rd50 }
    }

    pub fn weights(&self) -> ComponentWeights {
        match self.kind {
            Objective::D => ComponentWeights::D,
            Objective::C => ComponentWeights::C,
            Objective::A => ComponentWeights::A,
            Objective::Dual => ComponentWeights::dual(self.lambda),
            Objective::Multiple => ComponentWeights::multiple(self.lambda, self.lambda_a),
        }
    }

    /// Criterion over `sets`: the local version for one set, the robust average otherwise.
    pub fn build(&self, sets: Vec<ParamVector>) -> CriterionSpec {
        let robust = sets.len() > 1;
        let kind = match (self.kind, robust) {
            (Objective::D, false) => CriterionKind::D,
            (Objective::C, false) => CriterionKind::C,
            (Objective::A, false) => CriterionKind::A,
            (Objective::Dual, false) => CriterionKind::Dual,
            (Objective::D, true) => CriterionKind::RobustD,
            (Objective::Dual, true) => CriterionKind::RobustDual,
            _ => CriterionKind::Multiple,
        };
        CriterionSpec { kind, weights: vec![self.weights()], nominal_sets: sets, endpoint: self.endpoint, stage1: None }
    }

    pub fn label(&self, n_sets: usize) -> String {
        let base = match self.kind {
            Objective::D => "D".to_string(),
            Objective::C => format!("c[{:?}]", self.endpoint).to_lowercase(),
            Objective::A => "A".to_string(),
            Objective::Dual => format!("dual(lambda={})", self.lambda),
            Objective::Multiple => format!("multiple(d={}, a={})", self.lambda, self.lambda_a),
        };
        if n_sets > 1 {
            format!("robust {base} (K={n_sets})")
        } else {
            base
        }
    }
}

/// Fixed arm on the raw dose scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawArm {
    pub dose: f64,
    pub weight: f64,
}

impl RawArm {
    pub fn to_arm(self, scale: DoseScale) -> FixedArm {
        FixedArm { dose: scale.transform(self.dose), weight: self.weight }
    }
}

/// Control arm at 0 and lethal arm at 10000, each with `weight`.
pub fn default_arms(weight: f64) -> Vec<RawArm> {
    vec![RawArm { dose: 0.0, weight }, RawArm { dose: LETHAL_DOSE, weight }]
}

/// How stage-one rows are grouped into nominal sets.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// One set per distinct date.
    #[default]
    ByDate,
    /// A single set from all rows.
    Pooled,
    /// Explicit groups of dates.
    Groups(Vec<Vec<String>>),
}

/// Configuration of [`run_two_stage`], read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowConfig {
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub transform: DoseScale,
    /// Stage-one count CSV; relative paths resolve against the config file.
    pub data: PathBuf,
    /// Share of all observations taken in stage one.
    #[serde(default = "half")]
    pub alpha: f64,
    #[serde(default)]
    pub partition: Partition,
    pub criterion: CriterionChoice,
    /// Stage-two fixed arms on the raw scale; defaults to 0.225 at 0 and 10000.
    #[serde(default)]
    pub fixed_arms: Option<Vec<RawArm>>,
    /// Raw dose range searched by the swarm and scanned by the sensitivity check.
    #[serde(default = "default_range")]
    pub dose_range: [f64; 2],
    #[serde(default)]
    pub pso: SwarmConfig,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Add `alpha` times the stage-one information to the criterion.
    #[serde(default)]
    pub pool_stage1_information: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_model() -> String {
    "proportional-odds".into()
}

fn default_range() -> [f64; 2] {
    DEFAULT_DOSE_RANGE
}

fn default_grid_points() -> usize {
    2001
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

impl WorkflowConfig {
    pub fn new(data: PathBuf, criterion: CriterionChoice) -> Self {
        Self {
            model: default_model(),
            transform: DoseScale::default(),
            data,
            alpha: 0.5,
            partition: Partition::default(),
            criterion,
            fixed_arms: None,
            dose_range: DEFAULT_DOSE_RANGE,
            pso: SwarmConfig::default(),
            grid_points: 2001,
            tolerance: DEFAULT_TOLERANCE,
            pool_stage1_information: false,
            output_dir: None,
        }
    }

    /// Reads a JSON config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: WorkflowConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.data.is_relative() {
            cfg.data = base.join(&cfg.data);
        }
        if let Some(out) = &cfg.output_dir {
            if out.is_relative() {
                cfg.output_dir = Some(base.join(out));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ModelSpec::by_name(&self.model)?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        if !self.data.is_file() {
            return Err(Error::invalid(format!("data file {} does not exist", self.data.display())));
        }
        let [lo, hi] = self.dose_range;
        if !(lo >= 0.0 && lo < hi) {
            return Err(Error::invalid(format!("dose range [{lo}, {hi}] is invalid")));
        }
        self.criterion.weights().validate()?;
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        Ok(())
    }

    fn dose_box(&self) -> [f64; 2] {
        self.dose_range.map(|d| self.transform.transform(d))
    }
}

/// Design on both dose scales, as written to reports and returned by the service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub points_raw: Vec<f64>,
    pub points_transformed: Vec<f64>,
    pub weights: Vec<f64>,
    pub fixed_arms: Vec<ArmReport>,
    pub criterion: String,
    /// Criterion value (larger is better).
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub dose_raw: f64,
    pub dose_transformed: f64,
    pub weight: f64,
}

impl DesignReport {
    pub fn new(design: &Design, scale: DoseScale, criterion: String, value: f64) -> Self {
        let d = design.sorted();
        Self {
            points_raw: d.points.iter().map(|x| scale.inverse(*x)).collect(),
            points_transformed: d.points.clone(),
            weights: d.weights.clone(),
            fixed_arms: d
                .fixed_arms
                .iter()
                .map(|a| ArmReport { dose_raw: scale.inverse(a.dose), dose_transformed: a.dose, weight: a.weight })
                .collect(),
            criterion,
            value,
        }
    }

    pub fn to_design(&self) -> Design {
        Design {
            points: self.points_transformed.clone(),
            weights: self.weights.clone(),
            fixed_arms: self.fixed_arms.iter().map(|a| FixedArm { dose: a.dose_transformed, weight: a.weight }).collect(),
        }
    }
}

/// Summary of an equivalence check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub verdict: Verdict,
    pub max_sensitivity: f64,
    pub argmax_transformed: f64,
    pub argmax_raw: f64,
    pub tolerance: f64,
    pub generalized_inverse: bool,
}

impl VerificationSummary {
    pub fn new(v: &equivalence::Verification, scale: DoseScale) -> Self {
        Self {
            verdict: v.verdict,
            max_sensitivity: v.curve.max_value,
            argmax_transformed: v.curve.argmax,
            argmax_raw: scale.inverse(v.curve.argmax),
            tolerance: v.tolerance,
            generalized_inverse: v.generalized_inverse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFit {
    pub label: String,
    pub dates: Vec<String>,
    pub rows: usize,
    pub fit: FitResult,
}

/// Planned stage-two subjects per arm (raw dose).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub dose_raw: f64,
    pub subjects: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub model: String,
    pub alpha: f64,
    pub nominal_sets: Vec<GroupFit>,
    pub design: DesignReport,
    pub verification: VerificationSummary,
    pub stage1_subjects: u64,
    pub stage2_allocation: Vec<Allocation>,
    pub warnings: Vec<String>,
}

/// Label, member dates and records of one nominal-set partition.
pub type RecordGroup = (String, Vec<String>, Vec<CountRecord>);

/// Groups records into labelled nominal-set partitions (dates kept in first-seen order).
pub fn partition_records(records: &[CountRecord], partition: &Partition) -> Result<Vec<RecordGroup>> {
    let mut dates: Vec<String> = Vec::new();
    let mut by_date: BTreeMap<String, Vec<CountRecord>> = BTreeMap::new();
    for r in records {
        if !by_date.contains_key(&r.date) {
            dates.push(r.date.clone());
        }
        by_date.entry(r.date.clone()).or_default().push(r.clone());
    }
    Ok(match partition {
        Partition::Pooled => vec![("pooled".into(), dates, records.to_vec())],
        Partition::ByDate => dates
            .into_iter()
            .map(|d| {
                let rows = by_date[&d].clone();
                (d.clone(), vec![d], rows)
            })
            .collect(),
        Partition::Groups(groups) => {
            let mut out = Vec::new();
            for (i, g) in groups.iter().enumerate() {
                let mut rows = Vec::new();
                for d in g {
                    let r = by_date
                        .get(d)
                        .ok_or_else(|| Error::invalid(format!("group {} names unknown date '{d}'", i + 1)))?;
                    rows.extend(r.iter().cloned());
                }
                if rows.is_empty() {
                    return Err(Error::invalid(format!("group {} is empty", i + 1)));
                }
                out.push((format!("group{}", i + 1), g.clone(), rows));
            }
            out
        }
    })
}

/// Empirical design of observed records: transformed doses weighted by subjects.
pub fn empirical_design(records: &[CountRecord], scale: DoseScale) -> Result<Design> {
    let mut by_dose: BTreeMap<u64, (f64, u64)> = BTreeMap::new();
    for r in records {
        let x = scale.transform(r.dose);
        by_dose.entry(x.to_bits()).or_insert((x, 0)).1 += r.observed;
    }
    let total: u64 = by_dose.values().map(|v| v.1).sum();
    if total == 0 {
        return Err(Error::EmptyInput("no observed subjects".into()));
    }
    let (points, weights) = by_dose.values().map(|&(x, n)| (x, n as f64 / total as f64)).unzip();
    Design::new(points, weights, Vec::new())
}

/// Runs the full scheme; every failure names the stage it came from.
pub fn run_two_stage(config: &WorkflowConfig) -> Result<StageReport> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    let spec = ModelSpec::by_name(&config.model)?;
    let mut warnings = Vec::new();

    let records = ingest_csv(&config.data).map_err(|e| e.in_stage("ingest"))?;
    let groups = partition_records(&records, &config.partition).map_err(|e| e.in_stage("partition"))?;
    let mut fits = Vec::with_capacity(groups.len());
    for (label, dates, rows) in groups {
        let data = to_dose_counts(&rows, config.transform);
        let fit = fit_mle(&spec, &data).map_err(|e| Error::invalid(format!("set '{label}': {e}")).in_stage("fit"))?;
        info!("fitted set {label}: {:?}", fit.theta_hat.values());
        fits.push(GroupFit { label, dates, rows: rows.len(), fit });
    }
    let sets: Vec<ParamVector> = fits.iter().map(|g| g.fit.theta_hat.clone()).collect();
    let mut crit = config.criterion.build(sets);
    if config.pool_stage1_information {
        let design = empirical_design(&records, config.transform).map_err(|e| e.in_stage("stage1"))?;
        crit.stage1 = Some(StageOne { design, alpha: config.alpha });
    }
    let evaluator = Evaluator::new(&spec, &crit).map_err(|e| e.in_stage("criterion"))?;

    let raw_arms = match &config.fixed_arms {
        Some(a) => a.clone(),
        None => {
            let msg = format!(
                "no fixed arms configured; using {DEFAULT_ARM_WEIGHT} at dose 0 and {DEFAULT_ARM_WEIGHT} at dose {LETHAL_DOSE}"
            );
            warn!("{msg}");
            warnings.push(msg);
            default_arms(DEFAULT_ARM_WEIGHT)
        }
    };
    let arms: Vec<FixedArm> = raw_arms.iter().map(|a| a.to_arm(config.transform)).collect();
    let swarm = SwarmConfig { dose_box: config.dose_box(), ..config.pso.clone() };
    let objective = |d: &Design| evaluator.value(d);
    let result = pso::optimize(&objective, &swarm, &arms).map_err(|e| e.in_stage("design"))?;
    if !result.value.is_finite() {
        return Err(Error::Optimizer("no design with finite criterion found".into()).in_stage("design"));
    }

    let [lo, hi] = config.dose_box();
    let grid = GridSpec { lo, hi, n: config.grid_points };
    let verification = equivalence::verify_design(&evaluator, &result.design, &grid, config.tolerance)
        .map_err(|e| e.in_stage("verify"))?;
    if verification.verdict == Verdict::NotOptimal {
        let msg = format!("equivalence check failed: max sensitivity {:.3e}", verification.curve.max_value);
        warn!("{msg}");
        warnings.push(msg);
    }

    let n1: u64 = records.iter().map(|r| r.observed).sum();
    let n2 = (n1 as f64 * (1.0 - config.alpha) / config.alpha).round() as u64;
    let stage2_allocation = result
        .design
        .sorted()
        .allocate(n2)
        .into_iter()
        .map(|(x, n)| Allocation { dose_raw: config.transform.inverse(x), subjects: n })
        .collect();

    let label = config.criterion.label(fits.len());
    let report = StageReport {
        model: spec.name().to_string(),
        alpha: config.alpha,
        nominal_sets: fits,
        design: DesignReport::new(&result.design, config.transform, label.clone(), result.value),
        verification: VerificationSummary::new(&verification, config.transform),
        stage1_subjects: n1,
        stage2_allocation,
        warnings,
    };

    if let Some(dir) = &config.output_dir {
        write_outputs(dir, &report, &verification, &result.trace_csv(), &label).map_err(|e| e.in_stage("output"))?;
    }
    Ok(report)
}

fn write_outputs(
    dir: &Path,
    report: &StageReport,
    verification: &equivalence::Verification,
    trace: &str,
    label: &str,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)? + "\n")?;
    std::fs::write(dir.join("sensitivity.csv"), equivalence::sensitivity_csv(&verification.curve))?;
    let title = format!("Sensitivity, {label}");
    std::fs::write(
        dir.join("sensitivity.svg"),
        equivalence::sensitivity_svg(&verification.curve, &report.design.points_transformed, &title),
    )?;
    std::fs::write(dir.join("trace.csv"), trace)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(date: &str, dose: f64) -> CountRecord {
        CountRecord {
            date: date.into(),
            dose,
            duration: "1-24h".into(),
            observed: 10,
            normal: 5,
            radial: 3,
            zero_spicules: 1,
            dead_delayed: 1,
        }
    }

    #[test]
    fn partitions_by_date_in_order() {
        let r = vec![rec("b", 0.0), rec("a", 1.0), rec("b", 5.0)];
        let g = partition_records(&r, &Partition::ByDate).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].0, "b");
        assert_eq!(g[0].2.len(), 2);
        let p = partition_records(&r, &Partition::Pooled).unwrap();
        assert_eq!(p.len(), 1);
        assert!(partition_records(&r, &Partition::Groups(vec![vec!["z".into()]])).is_err());
    }

    #[test]
    fn empirical_design_pools_equal_doses() {
        let r = vec![rec("a", 0.0), rec("b", 0.0), rec("a", 9.0)];
        let d = empirical_design(&r, DoseScale::Log1p).unwrap();
        assert_eq!(d.points.len(), 2);
        assert!((d.weights[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn robust_kind_follows_set_count() {
        let sets = crate::presets::daily_fits();
        let c = CriterionChoice::new(Objective::Dual);
        assert_eq!(c.build(sets[..1].to_vec()).kind, CriterionKind::Dual);
        assert_eq!(c.build(sets).kind, CriterionKind::RobustDual);
    }

    #[test]
    fn config_defaults_from_minimal_json() {
        let cfg: WorkflowConfig = serde_json::from_str(r#"{"data": "x.csv", "criterion": {"kind": "d"}}"#).unwrap();
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.partition, Partition::ByDate);
        assert!(cfg.fixed_arms.is_none());
        assert_eq!(cfg.transform, DoseScale::Log1p);
    }
}
