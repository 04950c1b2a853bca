//! Optimal and sequential robust designs for dose-response experiments.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod criteria;
pub mod design;
pub mod equivalence;
pub mod error;
pub mod fitting;
pub mod linalg;
pub mod model;
pub mod presets;
pub mod probit;
pub mod pso;
pub mod workflow;

pub use design::{Design, FixedArm};
pub use error::{Error, Result};
pub use model::{CategoryProbs, DoseScale, FisherInfo, ModelSpec, NominalSet, ParamVector};
