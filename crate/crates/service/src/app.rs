use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Duration, Utc};
use pcs_core::baselines::EloConfig;
use pcs_core::dataio::load_items_raw;
use pcs_core::model::Checkpoint;
use pcs_core::scheduler::{Catalog, SchedulerState};
use pcs_core::{Item, ScoreTable};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;

use crate::config::{LiveRating, ServiceConfig};
use crate::error::{ApiError, Result, ServiceError};
use crate::store::{Choice, ResponseLog, ResponseRecord, Snapshot};

const MAX_ID_LEN: usize = 128;

fn valid_id(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= MAX_ID_LEN
        && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

#[derive(Debug, Clone)]
struct IssuedPair {
    left: String,
    right: String,
    issued_at: DateTime<Utc>,
}

#[derive(Debug, Default)]
struct Stats {
    n_responses: usize,
    n_ties: usize,
    per_respondent: BTreeMap<String, usize>,
}

struct LiveElo {
    config: EloConfig,
    ratings: HashMap<String, f64>,
}

/// Everything mutable lives here, behind one lock.
pub(crate) struct ServiceState {
    config: ServiceConfig,
    items: HashMap<String, Item>,
    catalog: Catalog,
    scheduler: SchedulerState,
    pairs: HashMap<String, IssuedPair>,
    log: ResponseLog,
    records: HashMap<String, ResponseRecord>,
    live: Option<LiveElo>,
    model: Option<ScoreTable>,
    stats: Stats,
    last_received: Option<DateTime<Utc>>,
    n_records: usize,
    since_snapshot: usize,
}

impl ServiceState {
    pub(crate) fn build(config: ServiceConfig) -> Result<Self> {
        config.validate()?;
        let items = load_items_raw(&config.items_path).map_err(|source| ServiceError::Catalog {
            path: config.items_path.clone(),
            source,
        })?;
        let catalog = Catalog::new(&items)?;
        let model = match &config.model_checkpoint {
            Some(path) => Some(Checkpoint::load(path)?.score_items_file(&config.items_path)?),
            None => None,
        };
        let seed = config.seed.unwrap_or_else(rand::random);
        tracing::info!(seed, items = items.len(), "catalog loaded");

        let (log, records) = ResponseLog::open(&config.log_path)?;
        let snapshot = Snapshot::load(&config.snapshot_path())
            .filter(|s| s.records <= records.len());
        let (scheduler, replay_from) = match snapshot {
            Some(s) => (s.scheduler, s.records),
            None => (
                SchedulerState::with_matching(seed, config.n_match_attributes, config.match_tolerance),
                0,
            ),
        };
        let live = (config.live_rating == LiveRating::Elo).then(|| {
            let config = EloConfig::default();
            let ratings = items
                .iter()
                .map(|item| (item.id.clone(), config.initial_rating))
                .collect();
            LiveElo { config, ratings }
        });
        let mut state = Self {
            items: items.into_iter().map(|i| (i.id.clone(), i)).collect(),
            catalog,
            scheduler,
            pairs: HashMap::new(),
            log,
            records: HashMap::new(),
            live,
            model,
            stats: Stats::default(),
            last_received: None,
            n_records: 0,
            since_snapshot: 0,
            config,
        };
        for (k, record) in records.into_iter().enumerate() {
            state.apply(record, k >= replay_from)?;
        }
        Ok(state)
    }

    /// Folds one logged response into every derived view. Returns false for
    /// a response id seen before.
    fn apply(&mut self, record: ResponseRecord, update_scheduler: bool) -> Result<bool> {
        if self.records.contains_key(&record.response_id) {
            return Ok(false);
        }
        for id in [&record.left_id, &record.right_id] {
            if !self.catalog.contains(id) {
                return Err(pcs_core::Error::UnknownItem(id.clone()).into());
            }
        }
        if update_scheduler {
            self.scheduler.record_response(
                &self.catalog,
                &record.response_id,
                &record.left_id,
                &record.right_id,
            )?;
        }
        if let Some(live) = &mut self.live {
            let mut left = live.ratings[&record.left_id];
            let mut right = live.ratings[&record.right_id];
            live.config.update(&mut left, &mut right, record.outcome);
            live.ratings.insert(record.left_id.clone(), left);
            live.ratings.insert(record.right_id.clone(), right);
        }
        self.stats.n_responses += 1;
        if record.outcome.is_tie() {
            self.stats.n_ties += 1;
        }
        *self
            .stats
            .per_respondent
            .entry(record.respondent_id.clone())
            .or_default() += 1;
        self.last_received = Some(
            self.last_received
                .map_or(record.received_at, |t| t.max(record.received_at)),
        );
        self.n_records += 1;
        self.records.insert(record.response_id.clone(), record);
        Ok(true)
    }

    /// Strictly increasing receipt times keep log order and time order equal.
    fn next_timestamp(&self) -> DateTime<Utc> {
        let now = Utc::now();
        match self.last_received {
            Some(last) if now <= last => last + Duration::microseconds(1),
            _ => now,
        }
    }

    fn expire_pairs(&mut self, now: DateTime<Utc>) {
        let ttl = Duration::seconds(self.config.pair_ttl_secs.min(i64::MAX as u64) as i64);
        self.pairs.retain(|_, p| now - p.issued_at <= ttl);
    }

    fn item_view(&self, id: &str) -> Value {
        let item = &self.items[id];
        json!({
            "id": item.id,
            "media_uri": item.media_uri,
            "attributes": item.attributes,
        })
    }

    fn issue_pair(&mut self, respondent: &str) -> Result<Value, ApiError> {
        if let Some(quota) = self.config.respondent_quota {
            if self.stats.per_respondent.get(respondent).copied().unwrap_or(0) >= quota {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "quota_reached",
                    format!("respondent {respondent:?} has answered {quota} pairs"),
                ));
            }
        }
        if self.catalog.len() < 2 {
            return Err(ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "catalog_empty",
                "the catalog has fewer than two items",
            ));
        }
        let now = Utc::now();
        self.expire_pairs(now);
        let (left, right) = self
            .scheduler
            .next_pair(&self.catalog)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.kind(), e.to_string()))?;
        let pair_id = uuid::Uuid::new_v4().to_string();
        let body = json!({
            "pair_id": pair_id,
            "left": self.item_view(&left),
            "right": self.item_view(&right),
        });
        self.pairs.insert(pair_id, IssuedPair { left, right, issued_at: now });
        Ok(body)
    }

    fn submit(&mut self, request: ResponseRequest) -> Result<(StatusCode, Value), ApiError> {
        if !valid_id(&request.response_id) {
            return Err(ApiError::bad_request("response_id must be 1-128 characters of [A-Za-z0-9_.-]"));
        }
        if !valid_id(&request.respondent) {
            return Err(ApiError::bad_request("respondent must be 1-128 characters of [A-Za-z0-9_.-]"));
        }
        let choice: Choice = request.choice.parse().map_err(ApiError::bad_request)?;
        if let Some(existing) = self.records.get(&request.response_id) {
            return Ok((StatusCode::OK, json!({ "status": "duplicate", "record": existing })));
        }
        let received_at = self.next_timestamp();
        self.expire_pairs(received_at);
        let pair = self
            .pairs
            .get(&request.pair_id)
            .ok_or_else(|| ApiError::not_found(format!("unknown or expired pair {:?}", request.pair_id)))?;
        let record = ResponseRecord {
            response_id: request.response_id,
            pair_id: request.pair_id,
            left_id: pair.left.clone(),
            right_id: pair.right.clone(),
            choice,
            outcome: choice.outcome(),
            respondent_id: request.respondent,
            received_at,
        };
        self.log.append(&record).map_err(|e| {
            tracing::error!(error = %e, "failed to persist response");
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "persistence", e.to_string())
        })?;
        self.pairs.remove(&record.pair_id);
        let body = json!({ "status": "recorded", "record": record });
        self.apply(record, true)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.kind(), e.to_string()))?;
        self.since_snapshot += 1;
        if self.config.snapshot_every > 0 && self.since_snapshot >= self.config.snapshot_every {
            self.write_snapshot();
        }
        Ok((StatusCode::CREATED, body))
    }

    pub(crate) fn write_snapshot(&mut self) {
        let snapshot = Snapshot {
            records: self.n_records,
            scheduler: self.scheduler.clone(),
        };
        match snapshot.save(&self.config.snapshot_path()) {
            Ok(()) => self.since_snapshot = 0,
            Err(e) => tracing::warn!(error = %e, "snapshot failed"),
        }
    }

    fn scores(&self, method: &str) -> Result<Value, ApiError> {
        let table = match method {
            "live" => {
                let live = self
                    .live
                    .as_ref()
                    .ok_or_else(|| ApiError::not_found("live rating is disabled"))?;
                ScoreTable::new("live_elo", live.ratings.clone())
                    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.kind(), e.to_string()))?
            }
            "model" => self
                .model
                .clone()
                .ok_or_else(|| ApiError::not_found("no model checkpoint loaded"))?,
            other => return Err(ApiError::bad_request(format!("unknown scoring method {other:?}"))),
        };
        let ranked: Vec<Value> = table
            .ranked()
            .into_iter()
            .map(|(id, score)| json!({ "item_id": id, "score": score }))
            .collect();
        Ok(json!({ "method": method, "scores": ranked }))
    }

    fn stats(&self) -> Value {
        let counts: Vec<u64> = self.catalog.ids().iter().map(|id| self.scheduler.shown(id)).collect();
        let n = self.stats.n_responses;
        json!({
            "n_responses": n,
            "tie_fraction": if n == 0 { 0.0 } else { self.stats.n_ties as f64 / n as f64 },
            "exposure": {
                "min": counts.iter().min().copied().unwrap_or(0),
                "max": counts.iter().max().copied().unwrap_or(0),
            },
            "per_respondent_counts": self.stats.per_respondent,
        })
    }
}

#[derive(Debug, Deserialize)]
struct ResponseRequest {
    response_id: String,
    pair_id: String,
    choice: String,
    respondent: String,
}

#[derive(Clone)]
pub struct AppState(Arc<Mutex<ServiceState>>);

impl AppState {
    fn lock(&self) -> MutexGuard<'_, ServiceState> {
        self.0.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    /// Writes a scheduler snapshot now.
    pub fn snapshot(&self) {
        self.lock().write_snapshot();
    }
}

#[derive(Debug, Deserialize)]
struct PairQuery {
    respondent: Option<String>,
}

async fn get_pair(
    State(state): State<AppState>,
    Query(query): Query<PairQuery>,
) -> Result<Json<Value>, ApiError> {
    let respondent = query
        .respondent
        .ok_or_else(|| ApiError::bad_request("missing respondent parameter"))?;
    if !valid_id(&respondent) {
        return Err(ApiError::bad_request("respondent must be 1-128 characters of [A-Za-z0-9_.-]"));
    }
    Ok(Json(state.lock().issue_pair(&respondent)?))
}

async fn post_response(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let request: ResponseRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))?;
    // The append syncs to disk; keep it off the async workers.
    let (status, body) = tokio::task::spawn_blocking(move || state.lock().submit(request))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok((status, Json(body)).into_response())
}

#[derive(Debug, Deserialize)]
struct ScoresQuery {
    method: Option<String>,
}

async fn get_scores(
    State(state): State<AppState>,
    Query(query): Query<ScoresQuery>,
) -> Result<Json<Value>, ApiError> {
    let method = query.method.as_deref().unwrap_or("live");
    Ok(Json(state.lock().scores(method)?))
}

async fn get_stats(State(state): State<AppState>) -> Json<Value> {
    Json(state.lock().stats())
}

async fn healthz() -> &'static str {
    "ok"
}

async fn not_found() -> ApiError {
    ApiError::not_found("no such route")
}

/// Loads the catalog, replays the log and builds the router.
pub fn build(config: ServiceConfig) -> Result<(Router, AppState)> {
    let ui_dir = config.ui_dir.clone();
    let state = AppState(Arc::new(Mutex::new(ServiceState::build(config)?)));
    let api = Router::new()
        .route("/api/pair", get(get_pair))
        .route("/api/response", post(post_response))
        .route("/api/scores", get(get_scores))
        .route("/api/stats", get(get_stats))
        .route("/healthz", get(healthz));
    let router = match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    };
    Ok((router.with_state(state.clone()), state))
}

/// A service listening in the background.
pub struct Server {
    pub addr: SocketAddr,
    pub state: AppState,
    task: JoinHandle<std::io::Result<()>>,
}

impl Server {
    /// Stops serving immediately, as a crash would.
    pub fn abort(self) {
        self.task.abort();
    }

    pub async fn wait(self) -> Result<()> {
        match self.task.await {
            Ok(result) => Ok(result?),
            Err(e) => Err(std::io::Error::other(e).into()),
        }
    }
}

pub async fn start(config: ServiceConfig) -> Result<Server> {
    let listen = config.listen_addr.clone();
    let (router, state) = build(config)?;
    let listener = TcpListener::bind(&listen).await?;
    let addr = listener.local_addr()?;
    tracing::info!(%addr, "listening");
    let task = tokio::spawn(async move { axum::serve(listener, router).await });
    Ok(Server { addr, state, task })
}

/// Serves until Ctrl-C, then writes a final snapshot.
pub async fn run(config: ServiceConfig) -> Result<()> {
    let listen = config.listen_addr.clone();
    let (router, state) = build(config)?;
    let listener = TcpListener::bind(&listen).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    state.snapshot();
    Ok(())
}
