//! HTTP/JSON front end for interactive adjudication.
//!
//! A session holds one document with its annotator columns, the current
//! enforcements and the last solution. Clients upload files, add
//! enforcements, solve, poll the solve status and export the merged review
//! file. Sessions live in memory; with a persistence directory every
//! session is also written there as a merged CoNLL file and reloaded on
//! start.
//!
//! | method | path | body | response |
//! |---|---|---|---|
//! | GET | `/health` | | `{"status":"ok"}` |
//! | POST | `/sessions` | [`api::CreateSession`] | [`api::SessionSummary`] |
//! | GET | `/sessions/{id}` | | [`api::SessionView`] |
//! | POST | `/sessions/{id}/enforcements` | [`api::EnforcementRequest`] | [`api::EnforcementResponse`] |
//! | POST | `/sessions/{id}/solve` | [`api::SolveRequest`] | [`api::SolveResponse`] |
//! | GET | `/sessions/{id}/status` | | [`api::StatusView`] |
//! | GET | `/sessions/{id}/export` | | merged CoNLL text |
//!
//! Errors carry an [`api::ErrorBody`]; an infeasible enforcement answers
//! 422 with the conflicting constraints in `witness`.

pub mod api;

use std::collections::{BTreeMap, HashMap};
use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path as FsPath, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use thiserror::Error;
use tokio::sync::Mutex;

use coref_adjudication::conll::{
    enforced_cells, parse_annotation, parse_merged_for_readjudication, render_column, result_cells, serialize_merged,
    Annotation, Document, LabeledChain,
};
use coref_adjudication::instance::link_costs;
use coref_adjudication::pipeline::merged_annotator_count;
use coref_adjudication::{
    build_instance, solve, ForcedMode, ForcedSpec, Instance, Objective, ObjectiveTag, SolverConfig, Status, Strategy,
};

use api::*;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("persistence directory {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot restore session from {path}: {message}")]
    Restore { path: PathBuf, message: String },
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub persist_dir: Option<PathBuf>,
    pub default_budget: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            persist_dir: None,
            default_budget: Duration::from_secs(300),
        }
    }
}

struct Session {
    id: String,
    document: Document,
    annotations: Vec<Annotation>,
    mode: ForcedMode,
    forced: ForcedSpec,
    revision: u64,
    /// Numbered result chains and the revision they were solved at.
    last: Option<(u64, Vec<LabeledChain>)>,
}

impl Session {
    fn instance(&self) -> Result<Instance, ApiError> {
        let forced = (!self.forced.is_empty()).then_some(&self.forced);
        build_instance(self.document.token_count(), &self.annotations, forced, self.mode)
            .map_err(|e| ApiError::unprocessable("invalid_instance", e.to_string()))
    }

    fn result_column(&self) -> Option<Vec<String>> {
        let n = self.document.token_count();
        let keep = enforced_cells(n, &self.forced).ok()?;
        match &self.last {
            Some((_, chains)) => result_cells(n, chains, Some(&keep)).ok(),
            None if self.forced.is_empty() => None,
            None => Some(
                keep.into_iter()
                    .map(|c| if c.is_empty() { "-".to_string() } else { c })
                    .collect(),
            ),
        }
    }

    fn export(&self) -> Result<String, ApiError> {
        let n = self.document.token_count();
        let cells = self.result_column().unwrap_or_else(|| vec!["-".to_string(); n]);
        serialize_merged(&self.document, &self.annotations, &cells)
            .map_err(|e| ApiError::unprocessable("export_failed", e.to_string()))
    }

    fn enforcement_view(&self) -> EnforcementView {
        EnforcementView {
            chains: self.forced.chains().to_vec(),
            locked_tokens: self.forced.locked_tokens().iter().copied().collect(),
            empty_tokens: self.forced.empty_tokens().iter().copied().collect(),
        }
    }

    /// Apply `actions` to a copy of the enforcements and keep it only when
    /// all of them succeed. Bumps the revision on change.
    fn apply(&mut self, actions: &[Action], reset: bool) -> Result<(), ApiError> {
        let mut forced = if reset { ForcedSpec::new() } else { self.forced.clone() };
        for action in actions {
            apply_action(&mut forced, action).map_err(|e| ApiError::unprocessable("invalid_enforcement", e))?;
        }
        forced
            .validate(self.document.token_count())
            .map_err(|e| ApiError::unprocessable("invalid_enforcement", e.to_string()))?;
        if forced != self.forced {
            self.forced = forced;
            self.revision += 1;
        }
        Ok(())
    }
}

fn fresh_label(forced: &ForcedSpec) -> String {
    let used: Vec<&str> = forced.chains().iter().map(|c| c.label.as_str()).collect();
    (1..)
        .map(|k: u64| k.to_string())
        .find(|l| !used.contains(&l.as_str()))
        .unwrap()
}

/// Forced mentions also lock their start token, as an `=` on the opening
/// cell of a merged file does.
fn apply_action(forced: &mut ForcedSpec, action: &Action) -> Result<(), String> {
    match action {
        Action::ForceMention { span, chain } => {
            let label = chain.clone().unwrap_or_else(|| fresh_label(forced));
            forced.force_mention(*span, &label).map_err(|e| e.to_string())?;
            forced.lock_token(span.start);
        }
        Action::ForceSame { first, second } => {
            if forced.label_of(*first).is_none() && forced.label_of(*second).is_none() {
                let label = fresh_label(forced);
                forced.force_mention(*first, &label).map_err(|e| e.to_string())?;
            }
            forced.force_same(*first, *second).map_err(|e| e.to_string())?;
            forced.lock_token(first.start);
            forced.lock_token(second.start);
        }
        Action::ForceDifferent { first, second } => {
            for span in [first, second] {
                if forced.label_of(*span).is_none() {
                    let label = fresh_label(forced);
                    forced.force_mention(*span, &label).map_err(|e| e.to_string())?;
                }
            }
            forced.force_different(*first, *second).map_err(|e| e.to_string())?;
            forced.lock_token(first.start);
            forced.lock_token(second.start);
        }
        Action::ForceEmpty { token } => forced.force_empty(*token),
        Action::LockToken { token } => forced.lock_token(*token),
    }
    Ok(())
}

struct Progress {
    state: SolveState,
    revision: Option<u64>,
    started: Option<Instant>,
    elapsed: Duration,
    status: Option<Status>,
    cost: Option<u64>,
    lower_bound: Option<u64>,
}

struct Slot {
    session: Mutex<Session>,
    cancel: std::sync::Mutex<Option<Arc<AtomicBool>>>,
    progress: std::sync::Mutex<Progress>,
}

impl Slot {
    fn new(session: Session) -> Arc<Self> {
        Arc::new(Slot {
            session: Mutex::new(session),
            cancel: std::sync::Mutex::new(None),
            progress: std::sync::Mutex::new(Progress {
                state: SolveState::Idle,
                revision: None,
                started: None,
                elapsed: Duration::ZERO,
                status: None,
                cost: None,
                lower_bound: None,
            }),
        })
    }
}

/// Shared server state; cheap to clone.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    config: ServiceConfig,
    sessions: std::sync::Mutex<HashMap<String, Arc<Slot>>>,
    next_id: AtomicU64,
}

impl AppState {
    /// Create the state, restoring sessions from the persistence directory.
    pub fn new(config: ServiceConfig) -> Result<Self, ServiceError> {
        let mut sessions = HashMap::new();
        let mut max_id = 0;
        if let Some(dir) = &config.persist_dir {
            let io = |source| ServiceError::Io {
                path: dir.clone(),
                source,
            };
            std::fs::create_dir_all(dir).map_err(io)?;
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(io)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "conll"))
                .collect();
            paths.sort();
            for path in paths {
                let id = path.file_stem().unwrap().to_string_lossy().into_owned();
                let restore = |message: String| ServiceError::Restore {
                    path: path.clone(),
                    message,
                };
                let text = std::fs::read_to_string(&path).map_err(|e| restore(e.to_string()))?;
                let session = session_from_merged(id.clone(), &text, ForcedMode::Annotator)
                    .map_err(|e| restore(e.body.message))?;
                if let Some(n) = id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                    max_id = max_id.max(n);
                }
                sessions.insert(id, Slot::new(session));
            }
        }
        Ok(AppState {
            inner: Arc::new(Inner {
                config,
                sessions: std::sync::Mutex::new(sessions),
                next_id: AtomicU64::new(max_id + 1),
            }),
        })
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        self.inner
            .sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session `{id}`")))
    }

    fn persist(&self, session: &Session) {
        let Some(dir) = &self.inner.config.persist_dir else {
            return;
        };
        let path = dir.join(format!("{}.conll", session.id));
        match session.export() {
            Ok(text) => {
                if let Err(e) = std::fs::write(&path, text) {
                    tracing::warn!("cannot write {}: {e}", path.display());
                }
            }
            Err(e) => tracing::warn!("cannot export session {}: {}", session.id, e.body.message),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: code.to_string(),
                message: message.into(),
                witness: None,
                revision: None,
            },
        }
    }

    fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn unprocessable(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn session_from_merged(id: String, text: &str, mode: ForcedMode) -> Result<Session, ApiError> {
    let count = merged_annotator_count(text).map_err(|e| ApiError::bad_request("parse_error", e.to_string()))?;
    let merged = parse_merged_for_readjudication(text, count)
        .map_err(|e| ApiError::bad_request("parse_error", e.to_string()))?;
    let previous: Vec<LabeledChain> = merged
        .previous
        .chains()
        .into_iter()
        .map(|(label, spans)| LabeledChain { label, spans })
        .collect();
    Ok(Session {
        id,
        document: merged.document,
        annotations: merged.annotations,
        mode,
        forced: merged.forced,
        revision: 0,
        last: (!previous.is_empty()).then_some((0, previous)),
    })
}

fn file_stem(name: &str) -> String {
    FsPath::new(name)
        .file_stem()
        .map_or_else(|| name.to_string(), |s| s.to_string_lossy().into_owned())
}

fn session_from_files(id: String, req: &CreateSession, mode: ForcedMode) -> Result<Session, ApiError> {
    if req.files.len() < 2 {
        return Err(ApiError::bad_request(
            "too_few_annotators",
            format!(
                "adjudication needs at least two annotator files, got {}",
                req.files.len()
            ),
        ));
    }
    let ids: Vec<String> = match &req.annotators {
        Some(ids) if ids.len() == req.files.len() => ids.clone(),
        Some(ids) => {
            return Err(ApiError::bad_request(
                "annotator_mismatch",
                format!("{} annotator ids for {} files", ids.len(), req.files.len()),
            ))
        }
        None => req.files.iter().map(|f| file_stem(&f.name)).collect(),
    };
    let mut docs = Vec::with_capacity(req.files.len());
    for (file, id) in req.files.iter().zip(&ids) {
        let doc = parse_annotation(&file.content, id)
            .map_err(|e| ApiError::bad_request("parse_error", format!("{}: {e}", file.name)))?;
        docs.push(doc);
    }
    coref_adjudication::conll::check_same_tokens(&docs)
        .map_err(|e| ApiError::bad_request("parse_error", e.to_string()))?;
    let document = docs[0].document.clone();
    let annotations: Vec<Annotation> = docs.into_iter().map(|d| d.annotation).collect();
    build_instance(document.token_count(), &annotations, None, mode)
        .map_err(|e| ApiError::bad_request("invalid_instance", e.to_string()))?;
    Ok(Session {
        id,
        document,
        annotations,
        mode,
        forced: ForcedSpec::new(),
        revision: 0,
        last: None,
    })
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn create_session(
    State(state): State<AppState>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionSummary>), ApiError> {
    let id = format!("s{}", state.inner.next_id.fetch_add(1, Ordering::Relaxed));
    let mode = if req.forced_annotator.unwrap_or(true) {
        ForcedMode::Annotator
    } else {
        ForcedMode::Excluded
    };
    let session = match &req.merged {
        Some(text) => session_from_merged(id.clone(), text, mode)?,
        None => session_from_files(id.clone(), &req, mode)?,
    };
    let summary = SessionSummary {
        id: id.clone(),
        revision: session.revision,
        token_count: session.document.token_count(),
        annotators: session.annotations.iter().map(|a| a.annotator.clone()).collect(),
    };
    state.persist(&session);
    state.inner.sessions.lock().unwrap().insert(id, Slot::new(session));
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let slot = state.slot(&id)?;
    let s = slot.session.lock().await;
    let n = s.document.token_count();
    let mut columns = Vec::with_capacity(s.annotations.len());
    for a in &s.annotations {
        columns
            .push(render_column(n, &a.mentions).map_err(|e| ApiError::unprocessable("render_failed", e.to_string()))?);
    }
    Ok(Json(SessionView {
        id: s.id.clone(),
        revision: s.revision,
        tokens: s
            .document
            .tokens()
            .map(|t| TokenView {
                index: t.index,
                surface: t.surface.clone(),
            })
            .collect(),
        annotators: s.annotations.iter().map(|a| a.annotator.clone()).collect(),
        columns,
        result: s.result_column(),
        result_revision: s.last.as_ref().map(|l| l.0),
        enforcements: s.enforcement_view(),
    }))
}

async fn post_enforcements(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<EnforcementRequest>,
) -> Result<Json<EnforcementResponse>, ApiError> {
    let slot = state.slot(&id)?;
    let mut s = slot.session.lock().await;
    s.apply(&req.actions, req.reset)?;
    state.persist(&s);
    Ok(Json(EnforcementResponse {
        revision: s.revision,
        enforcements: s.enforcement_view(),
    }))
}

async fn get_status(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<StatusView>, ApiError> {
    let slot = state.slot(&id)?;
    let p = slot.progress.lock().unwrap();
    let elapsed = match (p.state, p.started) {
        (SolveState::Running, Some(t)) => t.elapsed(),
        _ => p.elapsed,
    };
    Ok(Json(StatusView {
        state: p.state,
        revision: p.revision,
        elapsed_s: elapsed.as_secs_f64(),
        status: p.status.map(|s| s.to_string()),
        cost: p.cost,
        lower_bound: p.lower_bound,
    }))
}

async fn export(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let slot = state.slot(&id)?;
    let s = slot.session.lock().await;
    let text = s.export()?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
}

async fn post_solve(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<SolveRequest>,
) -> Result<Json<SolveResponse>, ApiError> {
    let tag: ObjectiveTag = req.objective.as_deref().unwrap_or("v").parse().map_err(
        |e: coref_adjudication::objective::ObjectiveError| ApiError::bad_request("bad_objective", e.to_string()),
    )?;
    let strategy: Strategy =
        req.strategy
            .as_deref()
            .unwrap_or("mm")
            .parse()
            .map_err(|e: coref_adjudication::solver::UnknownStrategy| {
                ApiError::bad_request("bad_strategy", e.to_string())
            })?;
    let budget = match req.budget_s {
        Some(b) if b.is_finite() && b > 0.0 => Duration::from_secs_f64(b),
        Some(_) => return Err(ApiError::bad_request("bad_budget", "budget_s must be positive")),
        None => state.inner.config.default_budget,
    };
    let slot = state.slot(&id)?;

    // a newer request supersedes the one in flight
    let cancel = Arc::new(AtomicBool::new(false));
    if let Some(old) = slot.cancel.lock().unwrap().replace(cancel.clone()) {
        old.store(true, Ordering::Relaxed);
    }

    let mut s = slot.session.lock().await;
    if cancel.load(Ordering::Relaxed) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "cancelled",
            "superseded by a newer solve request",
        ));
    }
    s.apply(&req.actions, false)?;
    let instance = s.instance()?;
    let revision = s.revision;
    let objective = Objective::new(tag);
    let config = SolverConfig {
        time_budget: Some(budget),
        enumerate_optima_up_to: req.enumerate.unwrap_or(10),
        cancel: Some(cancel.clone()),
        ..SolverConfig::with_strategy(strategy)
    };
    {
        let mut p = slot.progress.lock().unwrap();
        p.state = SolveState::Running;
        p.revision = Some(revision);
        p.started = Some(Instant::now());
        p.status = None;
        p.cost = None;
        p.lower_bound = None;
    }
    let solved = {
        let instance = instance.clone();
        tokio::task::spawn_blocking(move || solve(&instance, &objective, &config)).await
    };
    {
        let mut current = slot.cancel.lock().unwrap();
        if current.as_ref().is_some_and(|c| Arc::ptr_eq(c, &cancel)) {
            *current = None;
        }
    }
    let finish = |state: SolveState, outcome: Option<&coref_adjudication::SolveOutcome>| {
        let mut p = slot.progress.lock().unwrap();
        p.state = state;
        p.elapsed = p.started.map_or(Duration::ZERO, |t| t.elapsed());
        p.status = outcome.map(|o| o.status);
        p.cost = outcome.and_then(|o| o.best.as_ref().map(|b| b.cost()));
        p.lower_bound = outcome.map(|o| o.lower_bound);
    };
    let outcome = match solved {
        Ok(o) => o,
        Err(e) => {
            finish(SolveState::Failed, None);
            return Err(ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "solver_failed",
                e.to_string(),
            ));
        }
    };
    if cancel.load(Ordering::Relaxed) {
        finish(SolveState::Cancelled, Some(&outcome));
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "cancelled",
            "superseded by a newer solve request",
        ));
    }
    finish(SolveState::Done, Some(&outcome));
    if outcome.status == Status::Infeasible {
        let mut err = ApiError::unprocessable("infeasible", "the enforcements cannot be satisfied together");
        err.body.witness = outcome.witness.clone();
        err.body.revision = Some(revision);
        return Err(err);
    }

    let labels: BTreeMap<_, _> = instance.forced().labels();
    let chains = outcome
        .best
        .as_ref()
        .map(|b| coref_adjudication::conll::number_chains(&b.chains, &labels))
        .unwrap_or_default();
    if outcome.best.is_some() {
        s.last = Some((revision, chains.clone()));
        state.persist(&s);
    }
    let costs = link_costs(&instance, &objective);
    let selected: Vec<bool> = {
        let mut v = vec![false; instance.links().len()];
        if let Some(b) = &outcome.best {
            for &l in &b.selected {
                v[l] = true;
            }
        }
        v
    };
    let links = instance
        .links()
        .iter()
        .enumerate()
        .map(|(l, link)| {
            let (first, second) = instance.link_spans(l);
            LinkAudit {
                first,
                second,
                evidence: link.evidence(),
                omit: costs[l].omit,
                use_: costs[l].use_,
                selected: selected[l],
            }
        })
        .collect();
    let optima = outcome
        .optima
        .iter()
        .map(|o| OptimumView {
            cost: o.cost(),
            links: o.link_spans(&instance),
            chains: o.chains.clone(),
        })
        .collect();
    Ok(Json(SolveResponse {
        revision,
        status: outcome.status,
        objective: tag.to_string(),
        strategy: strategy.to_string(),
        cost: outcome.best.as_ref().map(|b| b.breakdown),
        lower_bound: outcome.lower_bound,
        gap: outcome.gap(),
        chains: chains.iter().map(ChainView::from).collect(),
        links,
        optima,
        result: s.result_column().unwrap_or_default(),
        chain_bound: outcome.chain_bound,
        bound_limited: outcome.bound_limited,
        stats: outcome.stats,
    }))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/enforcements", post(post_enforcements))
        .route("/sessions/{id}/solve", post(post_solve))
        .route("/sessions/{id}/status", get(get_status))
        .route("/sessions/{id}/export", get(export))
        .with_state(state)
}

/// Serve on `addr` until `shutdown` resolves.
pub async fn serve(
    addr: SocketAddr,
    config: ServiceConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let state = AppState::new(config)?;
    let io = |source| ServiceError::Io {
        path: PathBuf::from(addr.to_string()),
        source,
    };
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(io)?;
    tracing::info!("listening on {}", listener.local_addr().map_err(io)?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(io)
}
