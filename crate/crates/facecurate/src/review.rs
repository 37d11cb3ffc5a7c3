//! HTTP service for the manual merge-verification checkpoint.
//!
//! The service only ever writes the decision file: an append-only JSON-lines
//! log, one [`MergeCandidate`] per decision, fsynced before the response is
//! sent. On start-up the log is replayed (latest entry per pair wins), so a
//! killed session resumes where it stopped.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use facecurate_core::simkit::representatives;
use facecurate_core::stages::{latest_decisions, read_candidates, Decision, MergeCandidate};
use facecurate_core::{load_manifest, Manifest};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, PipelineError, Result};

pub const DEFAULT_PER_PAGE: usize = 50;
const MAX_PER_PAGE: usize = 500;

const PLACEHOLDER_SVG: &str = r##"<svg xmlns="http://www.w3.org/2000/svg" width="160" height="160" viewBox="0 0 160 160"><rect width="160" height="160" fill="#ddd"/><text x="80" y="86" font-family="sans-serif" font-size="14" text-anchor="middle" fill="#666">image missing</text></svg>"##;

#[derive(Clone, Debug)]
pub struct ReviewOptions {
    pub candidates_path: PathBuf,
    pub manifest_path: PathBuf,
    pub image_root: PathBuf,
    pub decisions_path: PathBuf,
    /// Representative draw; use the run's `reps` and `seed` so reviewers see
    /// the images that produced the score.
    pub reps: usize,
    pub seed: u64,
}

struct DecisionLog {
    file: File,
    path: PathBuf,
    latest: BTreeMap<(String, String), MergeCandidate>,
}

pub struct ReviewState {
    candidates: Vec<MergeCandidate>,
    position: BTreeMap<(String, String), usize>,
    manifest: Manifest,
    record_of: HashMap<String, usize>,
    image_root: PathBuf,
    reps: usize,
    seed: u64,
    log: Mutex<DecisionLog>,
}

impl ReviewState {
    pub fn open(opts: &ReviewOptions) -> Result<Arc<Self>> {
        let mut candidates = read_candidates(&opts.candidates_path)?;
        candidates.sort_by(|x, y| y.mean_score.total_cmp(&x.mean_score).then_with(|| x.key().cmp(&y.key())));
        let manifest = load_manifest(&opts.manifest_path)?;
        for c in &candidates {
            for s in [&c.subject_a, &c.subject_b] {
                if !manifest.subjects().contains_key(s) {
                    return Err(facecurate_core::Error::UnknownSubject(s.clone()).into());
                }
            }
        }
        let latest = if opts.decisions_path.exists() {
            drop_torn_tail(&opts.decisions_path)?;
            latest_decisions(read_candidates(&opts.decisions_path)?)
        } else {
            BTreeMap::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&opts.decisions_path)
            .map_err(io_err(&opts.decisions_path))?;
        let position = candidates.iter().enumerate().map(|(i, c)| (c.key(), i)).collect();
        let record_of = manifest.records().iter().enumerate().map(|(i, r)| (r.image_id.clone(), i)).collect();
        Ok(Arc::new(ReviewState {
            candidates,
            position,
            manifest,
            record_of,
            image_root: opts.image_root.clone(),
            reps: opts.reps,
            seed: opts.seed,
            log: Mutex::new(DecisionLog {
                file,
                path: opts.decisions_path.clone(),
                latest,
            }),
        }))
    }

    fn view(&self, log: &DecisionLog, index: usize) -> CandidateView {
        let c = &self.candidates[index];
        let current = log.latest.get(&c.key());
        CandidateView {
            subject_a: c.subject_a.clone(),
            subject_b: c.subject_b.clone(),
            mean_score: c.mean_score,
            decision: current.map_or(Decision::Pending, |d| d.decision),
            decided_by: current.and_then(|d| d.decided_by.clone()),
            decided_at: current.and_then(|d| d.decided_at),
            position: index + 1,
            total: self.candidates.len(),
        }
    }

    fn progress(&self, log: &DecisionLog) -> Progress {
        let decided = self
            .candidates
            .iter()
            .filter(|c| log.latest.get(&c.key()).is_some_and(|d| d.decision != Decision::Pending))
            .count();
        Progress {
            total: self.candidates.len(),
            decided,
            pending: self.candidates.len() - decided,
            complete: decided == self.candidates.len(),
        }
    }

    fn lookup(&self, a: &str, b: &str) -> Option<usize> {
        let key = if a <= b { (a.to_string(), b.to_string()) } else { (b.to_string(), a.to_string()) };
        self.position.get(&key).copied()
    }

    fn images(&self, subject: &str) -> Vec<ImageRef> {
        representatives(&self.manifest, subject, self.reps, self.seed)
            .into_iter()
            .map(|r| ImageRef {
                image_id: r.image_id.clone(),
                source_path: r.source_path.clone(),
                url: format!("/images/{}", r.image_id),
            })
            .collect()
    }

    fn record(&self, index: usize, decision: Decision, decided_by: String) -> Result<CandidateView> {
        let mut log = self.log.lock().unwrap_or_else(|e| e.into_inner());
        let entry = MergeCandidate {
            decision,
            decided_by: Some(decided_by),
            decided_at: Some(Utc::now()),
            ..self.candidates[index].clone()
        };
        let mut line = serde_json::to_string(&entry).expect("candidate serializes");
        line.push('\n');
        let path = log.path.clone();
        log.file.write_all(line.as_bytes()).map_err(io_err(&path))?;
        log.file.sync_data().map_err(io_err(&path))?;
        log.latest.insert(entry.key(), entry);
        Ok(self.view(&log, index))
    }
}

/// A crash mid-append can leave a final line without its newline; cut it
/// off so the log parses and later appends start on a fresh line.
fn drop_torn_tail(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    log::warn!("{}: dropping {} bytes of an incomplete last entry", path.display(), bytes.len() - keep);
    let file = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
    file.set_len(keep as u64).map_err(io_err(path))?;
    file.sync_data().map_err(io_err(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub subject_a: String,
    pub subject_b: String,
    pub mean_score: f64,
    pub decision: Decision,
    pub decided_by: Option<String>,
    pub decided_at: Option<chrono::DateTime<Utc>>,
    /// 1-based position in the score-ordered queue.
    pub position: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    pub image_id: String,
    pub source_path: String,
    pub url: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateDetail {
    pub candidate: CandidateView,
    pub images_a: Vec<ImageRef>,
    pub images_b: Vec<ImageRef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidatePage {
    pub items: Vec<CandidateView>,
    pub page: usize,
    pub per_page: usize,
    /// Matching candidates across all pages.
    pub total: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub decided: usize,
    pub pending: usize,
    pub complete: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatusFilter {
    Pending,
    Decided,
    #[default]
    All,
}

#[derive(Debug, Deserialize)]
pub struct ListQuery {
    #[serde(default)]
    pub status: StatusFilter,
    pub page: Option<usize>,
    pub per_page: Option<usize>,
}

#[derive(Debug, Deserialize)]
pub struct DecisionBody {
    pub decision: Decision,
    pub decided_by: String,
}

#[derive(Debug, Serialize)]
struct ApiError {
    error: String,
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ApiError { error: msg.into() })).into_response()
}

pub fn router(state: Arc<ReviewState>) -> Router {
    Router::new()
        .route("/candidates", get(list_candidates))
        .route("/candidates/{a}/{b}", get(get_candidate))
        .route("/candidates/{a}/{b}/decision", post(post_decision))
        .route("/images/{image_id}", get(get_image))
        .route("/progress", get(get_progress))
        .with_state(state)
}

async fn list_candidates(State(state): State<Arc<ReviewState>>, Query(q): Query<ListQuery>) -> Response {
    let page = q.page.unwrap_or(1).max(1);
    let per_page = q.per_page.unwrap_or(DEFAULT_PER_PAGE).clamp(1, MAX_PER_PAGE);
    let log = state.log.lock().unwrap_or_else(|e| e.into_inner());
    let matching: Vec<CandidateView> = (0..state.candidates.len())
        .map(|i| state.view(&log, i))
        .filter(|v| match q.status {
            StatusFilter::Pending => v.decision == Decision::Pending,
            StatusFilter::Decided => v.decision != Decision::Pending,
            StatusFilter::All => true,
        })
        .collect();
    let total = matching.len();
    let items = matching.into_iter().skip((page - 1) * per_page).take(per_page).collect();
    Json(CandidatePage {
        items,
        page,
        per_page,
        total,
    })
    .into_response()
}

async fn get_candidate(State(state): State<Arc<ReviewState>>, UrlPath((a, b)): UrlPath<(String, String)>) -> Response {
    let Some(index) = state.lookup(&a, &b) else {
        return error(StatusCode::NOT_FOUND, format!("({a}, {b}) is not a merge candidate"));
    };
    let candidate = {
        let log = state.log.lock().unwrap_or_else(|e| e.into_inner());
        state.view(&log, index)
    };
    let images_a = state.images(&candidate.subject_a);
    let images_b = state.images(&candidate.subject_b);
    Json(CandidateDetail {
        candidate,
        images_a,
        images_b,
    })
    .into_response()
}

async fn post_decision(
    State(state): State<Arc<ReviewState>>,
    UrlPath((a, b)): UrlPath<(String, String)>,
    Json(body): Json<DecisionBody>,
) -> Response {
    let Some(index) = state.lookup(&a, &b) else {
        return error(StatusCode::NOT_FOUND, format!("({a}, {b}) is not a merge candidate"));
    };
    if body.decision == Decision::Pending {
        return error(StatusCode::BAD_REQUEST, "decision must be same_person or different_person");
    }
    if body.decided_by.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "decided_by is required");
    }
    let st = state.clone();
    match tokio::task::spawn_blocking(move || st.record(index, body.decision, body.decided_by)).await {
        Ok(Ok(view)) => Json(view).into_response(),
        Ok(Err(e)) => {
            log::error!("failed to persist decision: {e}");
            error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn get_progress(State(state): State<Arc<ReviewState>>) -> Response {
    let log = state.log.lock().unwrap_or_else(|e| e.into_inner());
    Json(state.progress(&log)).into_response()
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("bmp") => "image/bmp",
        _ => "application/octet-stream",
    }
}

/// `source_path` resolved under the image root, refusing anything that
/// could escape it.
fn resolve(root: &Path, source_path: &str) -> Option<PathBuf> {
    let rel = Path::new(source_path);
    rel.components()
        .all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
        .then(|| root.join(rel))
}

fn placeholder() -> Response {
    (StatusCode::NOT_FOUND, [(header::CONTENT_TYPE, "image/svg+xml")], PLACEHOLDER_SVG).into_response()
}

async fn get_image(State(state): State<Arc<ReviewState>>, UrlPath(image_id): UrlPath<String>) -> Response {
    let Some(&i) = state.record_of.get(&image_id) else {
        return placeholder();
    };
    let record = &state.manifest.records()[i];
    let Some(path) = resolve(&state.image_root, &record.source_path) else {
        return placeholder();
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(e) => {
            log::warn!("image {image_id} unavailable at {}: {e}", path.display());
            placeholder()
        }
    }
}

/// Serves until ctrl-c.
pub async fn serve(opts: ReviewOptions, bind: &str) -> Result<()> {
    let state = ReviewState::open(&opts)?;
    {
        let log = state.log.lock().unwrap_or_else(|e| e.into_inner());
        let p = state.progress(&log);
        log::info!("{} of {} candidates decided; decisions go to {}", p.decided, p.total, log.path.display());
    }
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| PipelineError::Io {
            path: PathBuf::from(bind),
            source: e,
        })?;
    log::info!("review service listening on http://{}", listener.local_addr().map_err(io_err(bind))?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(io_err(bind))
}
