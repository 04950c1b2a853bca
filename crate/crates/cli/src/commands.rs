use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use doseopt_core::equivalence::{sensitivity_csv, sensitivity_svg};
use doseopt_core::probit::{two_stage_simulate, SimConfig};
use doseopt_core::workflow::{
    bp_design_request, design_request, efficiency_request, fit_csv_text, run_two_stage, verify_request,
    BpDesignRequest, DesignRequest, EfficiencyRequest, VerifyRequest, WorkflowConfig,
};
use doseopt_core::{DoseScale, Error};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::service;

#[derive(Debug, Parser)]
#[command(name = "doseopt", version, about = "Optimal and robust dose-response designs for ordinal and efficacy-toxicity models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Scale {
    Log1p,
    Identity,
}

impl From<Scale> for DoseScale {
    fn from(s: Scale) -> Self {
        match s {
            Scale::Log1p => DoseScale::Log1p,
            Scale::Identity => DoseScale::Identity,
        }
    }
}

/// Request documents are JSON files; `-` reads standard input.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an ordinal model to a count CSV and report endpoint estimates
    Fit {
        data: PathBuf,
        #[arg(long, default_value = "proportional-odds")]
        model: String,
        #[arg(long, value_enum, default_value_t = Scale::Log1p)]
        transform: Scale,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Search for an optimal or robust design
    Design {
        request: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Equivalence-theorem check of a given design
    Verify {
        request: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Also write the sensitivity curve as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Also write the sensitivity plot as SVG
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// D- or c-efficiency of one design relative to another
    Efficiency {
        request: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Bivariate probit D- or L-optimal design
    BpDesign {
        request: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Monte Carlo study of the bivariate probit two-stage scheme
    BpSimulate {
        request: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Full two-stage workflow from a config file
    Run {
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// HTTP service exposing the design, verify, fit and efficiency endpoints
    Serve {
        #[arg(long, env = "DOSEOPT_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

fn read_input(path: &Path) -> Result<String> {
    if path == Path::new("-") {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).map_err(Error::from)?;
        return Ok(s);
    }
    std::fs::read_to_string(path)
        .map_err(Error::from)
        .with_context(|| format!("reading {}", path.display()))
}

fn read_request<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_input(path)?;
    serde_json::from_str(&text).map_err(Error::from).with_context(|| format!("parsing {}", path.display()))
}

/// Canonical JSON rendering shared with the service.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value).map_err(Error::from)? + "\n")
}

fn emit<T: Serialize>(value: &T, output: Option<&Path>) -> Result<()> {
    let text = to_json(value)?;
    match output {
        Some(p) => std::fs::write(p, text).map_err(Error::from).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { data, model, transform, output } => {
            let text = read_input(&data)?;
            emit(&fit_csv_text(&model, transform.into(), &text)?, output.as_deref())
        }
        Command::Design { request, output } => {
            let req: DesignRequest = read_request(&request)?;
            emit(&design_request(&req)?, output.as_deref())
        }
        Command::Verify { request, output, csv, svg } => {
            let req: VerifyRequest = read_request(&request)?;
            let resp = verify_request(&req)?;
            if let Some(p) = csv {
                std::fs::write(&p, sensitivity_csv(&resp.curve)).map_err(Error::from)?;
            }
            if let Some(p) = svg {
                let support: Vec<f64> = req.design.doses.iter().map(|d| req.transform.transform(*d)).collect();
                std::fs::write(&p, sensitivity_svg(&resp.curve, &support, "Sensitivity")).map_err(Error::from)?;
            }
            emit(&resp, output.as_deref())
        }
        Command::Efficiency { request, output } => {
            let req: EfficiencyRequest = read_request(&request)?;
            emit(&efficiency_request(&req)?, output.as_deref())
        }
        Command::BpDesign { request, output } => {
            let req: BpDesignRequest = read_request(&request)?;
            emit(&bp_design_request(&req)?, output.as_deref())
        }
        Command::BpSimulate { request, output } => {
            let cfg: SimConfig = read_request(&request)?;
            emit(&two_stage_simulate(&cfg)?, output.as_deref())
        }
        Command::Run { config, output } => {
            let cfg = WorkflowConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let report = run_two_stage(&cfg)?;
            for w in &report.warnings {
                log::warn!("{w}");
            }
            emit(&report, output.as_deref())
        }
        Command::Serve { port, host } => {
            let rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
            rt.block_on(service::serve(&host, port))
        }
    }
}
