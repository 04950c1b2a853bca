//! Stateless HTTP endpoints. Handlers parse the body, run the core call on the blocking pool
//! and render the result with the same JSON writer as the command line.

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::Query;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use doseopt_core::workflow::{bp_design_request, design_request, efficiency_request, fit_csv_text, verify_request};
use doseopt_core::{DoseScale, Error};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::commands::to_json;

#[derive(Debug, Clone, Copy)]
enum Endpoint {
    Design,
    Verify,
    Fit,
    BpDesign,
    Efficiency,
}

impl Endpoint {
    fn prefix(self) -> &'static str {
        match self {
            Endpoint::Design => "DESIGN",
            Endpoint::Verify => "VERIFY",
            Endpoint::Fit => "FIT",
            Endpoint::BpDesign => "BP_DESIGN",
            Endpoint::Efficiency => "EFFICIENCY",
        }
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    code: String,
    message: String,
}

#[derive(Debug, Serialize)]
struct ErrorEnvelope {
    error: ErrorBody,
}

fn json_response(status: StatusCode, text: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], text).into_response()
}

fn error_response(status: StatusCode, code: String, message: String) -> Response {
    let body = ErrorEnvelope { error: ErrorBody { code, message } };
    json_response(status, serde_json::to_string(&body).unwrap_or_default() + "\n")
}

fn bad_request(ep: Endpoint, message: String) -> Response {
    error_response(StatusCode::BAD_REQUEST, format!("{}_BAD_REQUEST", ep.prefix()), message)
}

/// Input that parses but is rejected by the core is `INVALID`; failures of the numerics on valid
/// input are `NUMERICAL_FAILURE`.
fn core_error(ep: Endpoint, err: &Error) -> Response {
    let suffix = if err.is_numerical() { "NUMERICAL_FAILURE" } else { "INVALID" };
    error_response(StatusCode::UNPROCESSABLE_ENTITY, format!("{}_{suffix}", ep.prefix()), err.to_string())
}

async fn compute<T, F>(ep: Endpoint, job: F) -> Response
where
    T: Serialize + Send + 'static,
    F: FnOnce() -> doseopt_core::Result<T> + Send + 'static,
{
    match tokio::task::spawn_blocking(job).await {
        Ok(Ok(value)) => match to_json(&value) {
            Ok(text) => json_response(StatusCode::OK, text),
            Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL".into(), e.to_string()),
        },
        Ok(Err(e)) => core_error(ep, &e),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL".into(), e.to_string()),
    }
}

async fn json_endpoint<Req, Resp>(ep: Endpoint, body: Bytes, call: fn(&Req) -> doseopt_core::Result<Resp>) -> Response
where
    Req: DeserializeOwned + Send + 'static,
    Resp: Serialize + Send + 'static,
{
    let req: Req = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return bad_request(ep, e.to_string()),
    };
    compute(ep, move || call(&req)).await
}

async fn design(body: Bytes) -> Response {
    json_endpoint(Endpoint::Design, body, design_request).await
}

async fn verify(body: Bytes) -> Response {
    json_endpoint(Endpoint::Verify, body, verify_request).await
}

async fn efficiency(body: Bytes) -> Response {
    json_endpoint(Endpoint::Efficiency, body, efficiency_request).await
}

async fn bp_design(body: Bytes) -> Response {
    json_endpoint(Endpoint::BpDesign, body, bp_design_request).await
}

#[derive(Debug, Deserialize)]
struct FitQuery {
    #[serde(default = "default_model")]
    model: String,
    #[serde(default)]
    transform: DoseScale,
}

fn default_model() -> String {
    "proportional-odds".into()
}

async fn fit(query: Result<Query<FitQuery>, QueryRejection>, body: Bytes) -> Response {
    let Query(q) = match query {
        Ok(q) => q,
        Err(e) => return bad_request(Endpoint::Fit, e.body_text()),
    };
    let text = match String::from_utf8(body.to_vec()) {
        Ok(t) => t,
        Err(_) => return bad_request(Endpoint::Fit, "body is not UTF-8 text".into()),
    };
    compute(Endpoint::Fit, move || fit_csv_text(&q.model, q.transform, &text)).await
}

async fn health() -> Response {
    json_response(StatusCode::OK, "{\"status\":\"ok\"}\n".into())
}

async fn not_found() -> Response {
    error_response(StatusCode::NOT_FOUND, "NOT_FOUND".into(), "no such endpoint".into())
}

pub fn router() -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/design", post(design))
        .route("/verify", post(verify))
        .route("/fit", post(fit))
        .route("/bp/design", post(bp_design))
        .route("/efficiency", post(efficiency))
        .fallback(not_found)
}

pub async fn serve(host: &str, port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port))
        .await
        .with_context(|| format!("binding {host}:{port}"))?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router()).await.context("serving")
}
