//! HTTP scoring service for training loops.
//!
//! Endpoints (JSON over HTTP/1.1):
//!
//! * `POST /v1/score` scores a batch of completions, see [`ScoreRequest`].
//! * `POST /v1/advantages` normalizes grouped rewards, see [`AdvantagesRequest`].
//! * `GET /v1/stats` returns [`ServiceStats`].
//! * `GET /health` returns `ok`.
//!
//! Items of one request are scored concurrently on a bounded worker pool.
//! The execution cache is the only state shared between requests.

use std::collections::HashSet;
use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::advantage::{compute_advantages, AdvantageError, Strategy, DEFAULT_EPSILON};
use crate::executor::{DatabaseHandle, ErrorClass, ExecCache, ExecLimits, DEFAULT_CACHE_CAPACITY};
use crate::metrics::CompareOptions;
use crate::rewards::{format_reward, score_completion, CompositeKind, RewardBreakdown, ScoreOptions};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub db_root: PathBuf,
    pub limits: ExecLimits,
    pub tolerance: f64,
    /// Worker threads for scoring; 0 uses the available parallelism.
    pub workers: usize,
    pub cache_capacity: usize,
}

impl ServiceConfig {
    pub fn new(db_root: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            db_root: db_root.into(),
            limits: ExecLimits::default(),
            tolerance: 0.0,
            workers: 0,
            cache_capacity: DEFAULT_CACHE_CAPACITY,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("malformed request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Advantage(#[from] AdvantageError),
    #[error("database root {0} is not a directory")]
    BadDbRoot(PathBuf),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self {
            ServiceError::BadRequest(_) | ServiceError::Advantage(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

fn id_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreItem {
    pub id: Value,
    pub db_id: String,
    pub gold_sql: String,
    pub completion: String,
    #[serde(default)]
    pub kind: CompositeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreRequestOptions {
    #[serde(default)]
    pub timeout_ms: Option<u64>,
    #[serde(default)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub items: Vec<ScoreItem>,
    #[serde(default)]
    pub options: ScoreRequestOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub executable: bool,
    pub ex: u8,
    pub cp: f64,
    pub cr: f64,
    pub tc: f64,
    pub qa: f64,
    pub fr: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub id: Value,
    pub composite: f64,
    pub components: Components,
    pub error_class: Option<ErrorClass>,
}

impl ScoreResult {
    fn new(id: Value, b: &RewardBreakdown) -> Self {
        ScoreResult {
            id,
            composite: b.composite,
            components: Components {
                executable: b.executable,
                ex: b.r_ex,
                cp: b.r_cp,
                cr: b.r_cr,
                tc: b.r_tc,
                qa: b.r_qa,
                fr: b.r_fr,
            },
            error_class: b.error_class,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub results: Vec<ScoreResult>,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantagesRequest {
    pub groups: Vec<Vec<f64>>,
    pub strategy: Strategy,
    #[serde(default)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantagesResponse {
    pub advantages: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ServiceStats {
    pub requests_served: u64,
    pub items_scored: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub mean_latency_ms: f64,
}

pub struct RewardService {
    config: ServiceConfig,
    cache: ExecCache,
    pool: rayon::ThreadPool,
    requests: AtomicU64,
    items: AtomicU64,
    latency_us: AtomicU64,
}

impl std::fmt::Debug for RewardService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RewardService")
            .field("config", &self.config)
            .field("stats", &self.handle_stats())
            .finish()
    }
}

impl RewardService {
    pub fn new(config: ServiceConfig) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .thread_name(|i| format!("sqlreward-score-{i}"))
            .build()
            .expect("thread pool");
        RewardService {
            cache: ExecCache::with_capacity(config.cache_capacity),
            config,
            pool,
            requests: AtomicU64::new(0),
            items: AtomicU64::new(0),
            latency_us: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn score_options(&self, opts: ScoreRequestOptions) -> ScoreOptions {
        let mut limits = self.config.limits;
        if let Some(ms) = opts.timeout_ms.filter(|&ms| ms > 0) {
            limits.timeout = Duration::from_millis(ms);
        }
        ScoreOptions {
            limits,
            compare: CompareOptions::with_tolerance(opts.tolerance.unwrap_or(self.config.tolerance)),
        }
    }

    fn score_one(&self, item: &ScoreItem, opts: ScoreOptions) -> ScoreResult {
        let db = DatabaseHandle::resolve(&self.config.db_root, &item.db_id);
        let breakdown = score_completion(&item.gold_sql, &item.completion, &db, item.kind, Some(&self.cache), opts)
            .unwrap_or_else(|_| {
                RewardBreakdown::non_executable(
                    item.kind,
                    format_reward(&item.completion),
                    ErrorClass::GoldExecutionError,
                    None,
                )
            });
        ScoreResult::new(item.id.clone(), &breakdown)
    }

    /// Scores every item independently; a failing item never fails the batch.
    pub fn handle_score(&self, req: &ScoreRequest) -> Result<ScoreResponse, ServiceError> {
        let start = Instant::now();
        let mut seen = HashSet::new();
        for item in &req.items {
            let id = id_string(&item.id);
            if !seen.insert(id.clone()) {
                return Err(ServiceError::BadRequest(format!("duplicate item id `{id}`")));
            }
        }
        let opts = self.score_options(req.options);
        let results: Vec<ScoreResult> = self
            .pool
            .install(|| req.items.par_iter().map(|item| self.score_one(item, opts)).collect());
        let elapsed = start.elapsed();
        self.requests.fetch_add(1, Ordering::Relaxed);
        self.items.fetch_add(results.len() as u64, Ordering::Relaxed);
        self.latency_us
            .fetch_add(elapsed.as_micros() as u64, Ordering::Relaxed);
        Ok(ScoreResponse {
            results,
            timing: Timing {
                total_ms: elapsed.as_secs_f64() * 1e3,
            },
        })
    }

    pub fn handle_advantages(&self, req: &AdvantagesRequest) -> Result<AdvantagesResponse, ServiceError> {
        let advantages = compute_advantages(&req.groups, req.strategy, req.epsilon.unwrap_or(DEFAULT_EPSILON))?;
        Ok(AdvantagesResponse { advantages })
    }

    pub fn handle_stats(&self) -> ServiceStats {
        let cache = self.cache.stats();
        let requests = self.requests.load(Ordering::Relaxed);
        let latency_ms = self.latency_us.load(Ordering::Relaxed) as f64 / 1e3;
        ServiceStats {
            requests_served: requests,
            items_scored: self.items.load(Ordering::Relaxed),
            cache_hits: cache.hits,
            cache_misses: cache.misses,
            mean_latency_ms: if requests == 0 { 0.0 } else { latency_ms / requests as f64 },
        }
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(e.to_string()))
}

async fn score_route(State(svc): State<Arc<RewardService>>, body: Bytes) -> Result<Json<ScoreResponse>, ServiceError> {
    let req: ScoreRequest = parse_body(&body)?;
    tokio::task::spawn_blocking(move || svc.handle_score(&req))
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e)))?
        .map(Json)
}

async fn advantages_route(
    State(svc): State<Arc<RewardService>>,
    body: Bytes,
) -> Result<Json<AdvantagesResponse>, ServiceError> {
    let req: AdvantagesRequest = parse_body(&body)?;
    svc.handle_advantages(&req).map(Json)
}

async fn stats_route(State(svc): State<Arc<RewardService>>) -> Json<ServiceStats> {
    Json(svc.handle_stats())
}

async fn health_route() -> &'static str {
    "ok"
}

pub fn router(service: Arc<RewardService>) -> Router {
    Router::new()
        .route("/v1/score", post(score_route))
        .route("/v1/advantages", post(advantages_route))
        .route("/v1/stats", get(stats_route))
        .route("/health", get(health_route))
        .with_state(service)
}

/// Checks the configuration and binds the listening socket.
pub async fn bind(config: &ServiceConfig, addr: SocketAddr) -> Result<tokio::net::TcpListener, ServiceError> {
    if !config.db_root.is_dir() {
        return Err(ServiceError::BadDbRoot(config.db_root.clone()));
    }
    tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind { addr, source })
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    listener: tokio::net::TcpListener,
    service: Arc<RewardService>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    axum::serve(listener, router(service))
        .with_graceful_shutdown(shutdown)
        .await?;
    Ok(())
}
