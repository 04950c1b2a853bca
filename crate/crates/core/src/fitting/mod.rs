//! Maximum-likelihood fitting, model comparison and delta-method endpoint inference.

mod endpoints;
mod mle;
mod records;

pub use endpoints::{
    default_rd50_upper, endpoint_variance, ld50, ld50_gradient, ratio_variance, rd50,
    rd50_gradient, rd50_in, EndpointEstimate, EndpointKind, SpreadMatrix,
};
pub use mle::{
    expected_information, fit_mle, fit_mle_with, log_likelihood, observed_information, score,
    FitOptions, FitResult,
};
pub use records::{to_dose_counts, CountRecord, DoseCounts};
