//! JSON-over-HTTP front end for interactive search sessions.
//!
//! All routes live under `/api/v1`. Session state transitions go through
//! [`attrsearch_core::session::Session`]; this crate only translates between
//! item ids and gallery positions, persists choices and renders views.

mod error;
pub mod store;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use attrsearch_core::dataset::Dataset;
use attrsearch_core::session::{
    Engine, Feedback, Session, SessionHeader, SessionLog, Status, StepRecord, Strategy,
};

pub use error::{ApiError, ApiResult};
use store::{ChoiceRecord, LogStore, Mode, Record, SessionMeta};

#[derive(Clone, Debug)]
pub struct ServerOptions {
    pub default_strategy: Strategy,
    pub max_steps: usize,
    /// Where session logs are written and replayed from; `None` keeps sessions in memory only.
    pub log_dir: Option<PathBuf>,
    /// Static files served for every path outside the API.
    pub ui_dir: Option<PathBuf>,
    /// Per-item image URL, with `{id}` replaced by the item id.
    pub asset_url_template: Option<String>,
    /// Seeds random query and target picks.
    pub seed: u64,
}

impl Default for ServerOptions {
    fn default() -> Self {
        ServerOptions {
            default_strategy: Strategy::Fcs,
            max_steps: attrsearch_core::session::DEFAULT_MAX_STEPS,
            log_dir: None,
            ui_dir: None,
            asset_url_template: None,
            seed: 0,
        }
    }
}

struct LiveSession {
    meta: SessionMeta,
    header: SessionHeader,
    session: Session,
    steps: Vec<StepRecord>,
}

struct SessionSlot {
    /// Set while a choice is being applied; a second concurrent post is refused.
    posting: AtomicBool,
    live: tokio::sync::Mutex<LiveSession>,
}

struct PostingGuard<'a>(&'a AtomicBool);

impl Drop for PostingGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

pub struct AppState {
    engine: Engine,
    dataset: Arc<Dataset>,
    options: ServerOptions,
    store: Option<LogStore>,
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
    rng: Mutex<ChaCha8Rng>,
}

impl AppState {
    /// `engine.gallery` must have been built from `dataset`.
    pub fn new(
        engine: Engine,
        dataset: Arc<Dataset>,
        options: ServerOptions,
    ) -> std::io::Result<Self> {
        let store = options.log_dir.as_ref().map(LogStore::open).transpose()?;
        Ok(AppState {
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(options.seed)),
            engine,
            dataset,
            options,
            store,
            sessions: RwLock::new(HashMap::new()),
        })
    }

    /// Rebuilds every session found in the log directory. Returns how many were restored.
    pub fn restore(&self) -> std::io::Result<usize> {
        let Some(store) = &self.store else {
            return Ok(0);
        };
        let mut restored = 0;
        for (meta, choices) in store.load_all()? {
            match self.replay(meta.clone(), &choices) {
                Ok(live) => {
                    self.insert(live);
                    restored += 1;
                }
                Err(e) => {
                    tracing::warn!(session = %meta.id, error = %e, "could not replay session log")
                }
            }
        }
        Ok(restored)
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session map poisoned").len()
    }

    fn insert(&self, live: LiveSession) {
        let id = live.meta.id.clone();
        let slot = SessionSlot {
            posting: AtomicBool::new(false),
            live: tokio::sync::Mutex::new(live),
        };
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(id, Arc::new(slot));
    }

    fn slot(&self, id: &str) -> ApiResult<Arc<SessionSlot>> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no session {id}")))
    }

    fn position(&self, id: &str) -> ApiResult<usize> {
        self.engine
            .gallery
            .position_of(id)
            .ok_or_else(|| ApiError::NotFound(format!("no item {id}")))
    }

    fn start(&self, meta: SessionMeta) -> ApiResult<LiveSession> {
        let query = self.position(&meta.query)?;
        let target = meta
            .target
            .as_deref()
            .map(|t| self.position(t))
            .transpose()?;
        let mut session = Session::new(&self.engine, query, target, meta.strategy, meta.max_steps)?;
        let header = session.header(&self.engine);
        Ok(LiveSession {
            meta,
            header,
            session,
            steps: Vec::new(),
        })
    }

    fn replay(&self, meta: SessionMeta, choices: &[ChoiceRecord]) -> ApiResult<LiveSession> {
        let mut live = self.start(meta)?;
        for choice in choices {
            live.session.candidates(&self.engine)?;
            let feedback = self.feedback(choice)?;
            let record = live.session.apply_feedback(&self.engine, &feedback)?;
            live.steps.push(record);
        }
        Ok(live)
    }

    fn feedback(&self, choice: &ChoiceRecord) -> ApiResult<Feedback> {
        let pos = |id: &String| {
            self.engine
                .gallery
                .position_of(id)
                .ok_or_else(|| ApiError::Validation(format!("item {id} was not presented")))
        };
        Ok(Feedback {
            accepted: choice.accepted.iter().map(pos).collect::<ApiResult<_>>()?,
            chosen: choice.chosen.as_ref().map(pos).transpose()?,
            found: choice.found,
        })
    }

    fn random_item(&self, eligible: impl Fn(usize) -> bool) -> Option<usize> {
        let candidates: Vec<usize> = (0..self.engine.gallery.len())
            .filter(|&i| eligible(i))
            .collect();
        if candidates.is_empty() {
            return None;
        }
        let mut rng = self.rng.lock().expect("rng poisoned");
        Some(candidates[rng.gen_range(0..candidates.len())])
    }

    fn card(&self, pos: usize) -> ItemCard {
        let g = &self.engine.gallery;
        let index = g.dataset_index(pos);
        let item = self.dataset.item(index);
        let id = g.id(pos).to_string();
        ItemCard {
            labels: self
                .dataset
                .named_labels(index)
                .into_iter()
                .map(|(a, v)| (a.to_string(), v.to_string()))
                .collect(),
            glyph: Glyph {
                features: item.features.clone(),
                values: item.labels.clone(),
            },
            asset_url: self
                .options
                .asset_url_template
                .as_ref()
                .map(|t| t.replace("{id}", &id)),
            id,
        }
    }

    fn view(&self, live: &LiveSession) -> SessionView {
        let st = live.session.state();
        let g = &self.engine.gallery;
        SessionView {
            id: live.meta.id.clone(),
            mode: live.meta.mode,
            strategy: live.meta.strategy,
            status: st.status,
            step: st.step,
            max_steps: st.max_steps,
            created_at: live.meta.created_at,
            query: self.card(st.query),
            queries: st.queries.iter().map(|&q| g.id(q).to_string()).collect(),
            constraints: st.constraints.len(),
            target: match live.meta.mode {
                Mode::Sandbox => st.target.map(|t| self.card(t)),
                Mode::Live => None,
            },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Glyph {
    pub features: Vec<f64>,
    /// Value index per attribute (schema order), `null` when unlabelled.
    pub values: Vec<Option<usize>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ItemCard {
    pub id: String,
    pub labels: BTreeMap<String, String>,
    pub glyph: Glyph,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asset_url: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub mode: Mode,
    pub strategy: Strategy,
    pub status: Status,
    pub step: usize,
    pub max_steps: usize,
    pub created_at: u64,
    pub query: ItemCard,
    /// Query ids so far, starting with the initial one.
    pub queries: Vec<String>,
    pub constraints: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<ItemCard>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidateGroup {
    pub attribute: String,
    pub candidates: Vec<ItemCard>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidatesView {
    pub session: String,
    pub step: usize,
    pub groups: Vec<CandidateGroup>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct CreateSession {
    /// An item id, or `"random"`.
    pub query: String,
    pub strategy: Option<Strategy>,
    #[serde(default = "live_mode")]
    pub mode: Mode,
    /// Sandbox only: an item id or `"random"` (the default).
    pub target: Option<String>,
    pub max_steps: Option<usize>,
}

fn live_mode() -> Mode {
    Mode::Live
}

#[derive(Clone, Debug, Deserialize)]
pub struct ChoiceBody {
    #[serde(default)]
    pub accepted: Vec<String>,
    pub chosen: Option<String>,
    /// Live mode: the chosen item is the user's target.
    #[serde(default)]
    pub found: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChoiceResponse {
    pub record: StepRecord,
    pub session: SessionView,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulatedChoice {
    pub accepted: Vec<String>,
    pub chosen: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TargetRankView {
    pub target: ItemCard,
    pub rank: usize,
    pub gallery_size: usize,
    /// Rank before the first round, then after each round.
    pub rank_curve: Vec<usize>,
    /// What the simulated user would answer to the current candidates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulated: Option<SimulatedChoice>,
}

type AppStateRef = State<Arc<AppState>>;

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    match body {
        Ok(Json(v)) => Ok(v),
        Err(e) if e.status() == StatusCode::UNPROCESSABLE_ENTITY => {
            Err(ApiError::Validation(e.body_text()))
        }
        Err(e) => Err(ApiError::BadRequest(e.body_text())),
    }
}

async fn health(State(app): AppStateRef) -> Json<serde_json::Value> {
    let strategies: Vec<Strategy> = Strategy::ALL
        .into_iter()
        .filter(|&s| app.engine.supports(s).is_ok())
        .collect();
    Json(serde_json::json!({
        "status": "ok",
        "items": app.engine.gallery.len(),
        "attributes": app.engine.gallery.n_attributes(),
        "strategies": strategies,
        "default_strategy": app.options.default_strategy,
        "sessions": app.session_count(),
    }))
}

async fn schema(State(app): AppStateRef) -> Json<serde_json::Value> {
    let attributes: Vec<_> = app
        .dataset
        .schema()
        .attributes()
        .iter()
        .map(|a| serde_json::json!({ "name": a.name, "values": a.values }))
        .collect();
    Json(serde_json::json!({
        "attributes": attributes,
        "feature_dim": app.dataset.dim(),
        "gallery_size": app.engine.gallery.len(),
    }))
}

/// `GET /items?limit=&offset=&<attribute>=<value>…`
async fn list_items(
    State(app): AppStateRef,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<Json<serde_json::Value>> {
    let number = |key: &str, default: usize| -> ApiResult<usize> {
        params.get(key).map_or(Ok(default), |v| {
            v.parse()
                .map_err(|_| ApiError::BadRequest(format!("{key} must be a non-negative integer")))
        })
    };
    let limit = number("limit", 50)?.min(1000);
    let offset = number("offset", 0)?;
    let schema = app.dataset.schema();
    let mut filters = Vec::new();
    for (key, value) in &params {
        if key == "limit" || key == "offset" {
            continue;
        }
        let a = schema
            .attribute_index(key)
            .ok_or_else(|| ApiError::BadRequest(format!("unknown attribute {key}")))?;
        let v = schema
            .value_index(a, value)
            .ok_or_else(|| ApiError::BadRequest(format!("unknown value {value} for {key}")))?;
        filters.push((a, v));
    }
    let g = &app.engine.gallery;
    let matching: Vec<usize> = (0..g.len())
        .filter(|&i| filters.iter().all(|&(a, v)| g.labels(i)[a] == Some(v)))
        .collect();
    let items: Vec<ItemCard> = matching
        .iter()
        .skip(offset)
        .take(limit)
        .map(|&i| app.card(i))
        .collect();
    Ok(Json(
        serde_json::json!({ "total": matching.len(), "offset": offset, "items": items }),
    ))
}

async fn get_item(State(app): AppStateRef, Path(id): Path<String>) -> ApiResult<Json<ItemCard>> {
    let pos = app.position(&id)?;
    Ok(Json(app.card(pos)))
}

async fn create_session(
    State(app): AppStateRef,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let body = json_body(body)?;
    let g = &app.engine.gallery;
    let query = if body.query == "random" {
        app.random_item(|_| true)
            .ok_or_else(|| ApiError::Validation("the gallery is empty".into()))?
    } else {
        app.position(&body.query)?
    };
    let target = match (body.mode, body.target.as_deref()) {
        (Mode::Live, None) => None,
        (Mode::Live, Some(_)) => {
            return Err(ApiError::Validation("live sessions take no target".into()))
        }
        (Mode::Sandbox, None | Some("random")) => {
            let shares = |i: usize| {
                i != query
                    && g.labels(i)
                        .iter()
                        .zip(g.labels(query))
                        .any(|(a, b)| a.is_some() && a == b)
            };
            Some(app.random_item(shares).ok_or_else(|| {
                ApiError::Validation("no item shares a label with the query".into())
            })?)
        }
        (Mode::Sandbox, Some(id)) => Some(app.position(id)?),
    };
    let max_steps = body.max_steps.unwrap_or(app.options.max_steps);
    let meta = SessionMeta {
        id: uuid::Uuid::new_v4().to_string(),
        mode: body.mode,
        strategy: body.strategy.unwrap_or(app.options.default_strategy),
        query: g.id(query).to_string(),
        target: target.map(|t| g.id(t).to_string()),
        max_steps,
        created_at: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    let live = app.start(meta.clone())?;
    if let Some(store) = &app.store {
        store
            .append(&meta.id, &Record::Session(meta.clone()))
            .map_err(|e| ApiError::Internal(format!("could not write session log: {e}")))?;
    }
    let view = app.view(&live);
    tracing::info!(session = %meta.id, mode = ?meta.mode, strategy = %meta.strategy, "session created");
    app.insert(live);
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(
    State(app): AppStateRef,
    Path(id): Path<String>,
) -> ApiResult<Json<SessionView>> {
    let slot = app.slot(&id)?;
    let live = slot.live.lock().await;
    Ok(Json(app.view(&live)))
}

async fn candidates(
    State(app): AppStateRef,
    Path(id): Path<String>,
) -> ApiResult<Json<CandidatesView>> {
    let slot = app.slot(&id)?;
    let mut live = slot.live.lock().await;
    let presentation = live.session.candidates(&app.engine)?.clone();
    let g = &app.engine.gallery;
    Ok(Json(CandidatesView {
        session: id,
        step: presentation.step,
        groups: presentation
            .shown
            .iter()
            .map(|s| CandidateGroup {
                attribute: g.attribute_name(s.attribute).to_string(),
                candidates: vec![app.card(s.item)],
            })
            .collect(),
    }))
}

async fn choose(
    State(app): AppStateRef,
    Path(id): Path<String>,
    body: Result<Json<ChoiceBody>, JsonRejection>,
) -> ApiResult<Json<ChoiceResponse>> {
    let body = json_body(body)?;
    let slot = app.slot(&id)?;
    if slot.posting.swap(true, Ordering::AcqRel) {
        return Err(ApiError::Conflict(
            "another choice for this session is being applied".into(),
        ));
    }
    let _guard = PostingGuard(&slot.posting);
    let mut live = slot.live.lock().await;
    live.session.candidates(&app.engine)?;
    let choice = ChoiceRecord {
        step: live.session.state().step + 1,
        accepted: body.accepted,
        chosen: body.chosen,
        found: body.found,
    };
    let feedback = app.feedback(&choice)?;
    // Apply to a copy so a failed log write leaves memory and disk in step.
    let mut next = live.session.clone();
    let record = next.apply_feedback(&app.engine, &feedback)?;
    if let Some(store) = &app.store {
        store
            .append(&id, &Record::Choice(choice))
            .map_err(|e| ApiError::Internal(format!("could not write session log: {e}")))?;
    }
    live.session = next;
    live.steps.push(record.clone());
    Ok(Json(ChoiceResponse {
        record,
        session: app.view(&live),
    }))
}

async fn history(State(app): AppStateRef, Path(id): Path<String>) -> ApiResult<Json<SessionLog>> {
    let slot = app.slot(&id)?;
    let live = slot.live.lock().await;
    Ok(Json(SessionLog {
        header: live.header.clone(),
        steps: live.steps.clone(),
    }))
}

async fn target_rank(
    State(app): AppStateRef,
    Path(id): Path<String>,
) -> ApiResult<Json<TargetRankView>> {
    let slot = app.slot(&id)?;
    let mut live = slot.live.lock().await;
    if live.meta.mode != Mode::Sandbox {
        return Err(ApiError::Forbidden(
            "target rank is only available for sandbox sessions".into(),
        ));
    }
    let engine = &app.engine;
    let target = live
        .session
        .state()
        .target
        .ok_or_else(|| ApiError::Internal("sandbox session without target".into()))?;
    let rank = live.session.target_rank(engine).expect("target known");
    let rank_curve = std::iter::once(live.header.initial_target_rank)
        .chain(live.steps.iter().map(|s| s.target_rank))
        .flatten()
        .collect();
    let simulated = if live.session.is_active() && live.session.candidates(engine).is_ok() {
        let fb = live.session.simulate_feedback(engine)?;
        let id = |i: usize| engine.gallery.id(i).to_string();
        Some(SimulatedChoice {
            accepted: fb.accepted.iter().map(|&i| id(i)).collect(),
            chosen: fb.chosen.map(id),
        })
    } else {
        None
    };
    Ok(Json(TargetRankView {
        target: app.card(target),
        rank,
        gallery_size: engine.gallery.len(),
        rank_curve,
        simulated,
    }))
}

pub fn router(app: Arc<AppState>) -> Router {
    let ui_dir = app.options.ui_dir.clone();
    let api = Router::new()
        .route("/health", get(health))
        .route("/schema", get(schema))
        .route("/items", get(list_items))
        .route("/items/{id}", get(get_item))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/candidates", get(candidates))
        .route("/sessions/{id}/choice", post(choose))
        .route("/sessions/{id}/history", get(history))
        .route("/sessions/{id}/target-rank", get(target_rank))
        .fallback(|| async { ApiError::NotFound("no such endpoint".into()) })
        .with_state(app);
    let router = Router::new().nest("/api/v1", api);
    match ui_dir {
        Some(dir) => router.fallback_service(ServeDir::new(dir)),
        None => router,
    }
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(app: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(address = %listener.local_addr()?, "listening");
    axum::serve(listener, router(app)).await
}
