//! JSON HTTP API over a populated store.
//!
//! The datamart is loaded once at startup and treated as read-only. Cohort
//! definitions are the only mutable state; they are kept behind one lock and
//! mirrored to `<store>/cohort_definitions.json`. Generation runs on the
//! blocking thread pool.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::characterize::StatRecord;
use crate::cohort::{generate_from, CohortData, CohortDefinition, CohortResult, GenerateOptions};
use crate::error::{Error, Result};
use crate::nlp;
use crate::status::PipelineStatus;
use crate::store::{CohortRow, Datamart, NoteNlp};
use crate::vocab::{Concept, VocabularyStore};

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 500;
pub const DEFINITIONS_FILE: &str = "cohort_definitions.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredCohort {
    pub definition: CohortDefinition,
    #[serde(skip)]
    pub result: Option<CohortResult>,
}

#[derive(Default)]
struct Registry {
    next_id: i64,
    cohorts: BTreeMap<i64, StoredCohort>,
}

/// Shared, read-mostly service state.
pub struct AppState {
    store: Option<PathBuf>,
    vocab: VocabularyStore,
    data: Arc<CohortData>,
    note_nlp: Vec<NoteNlp>,
    stats: Vec<StatRecord>,
    registry: Mutex<Registry>,
}

impl AppState {
    /// Builds state from a loaded datamart. `store` enables status reads and
    /// definition persistence.
    pub fn new(mart: &Datamart, store: Option<&Path>, opts: &GenerateOptions) -> Result<Self> {
        let mut vocab = VocabularyStore::from_datamart(mart)?;
        if vocab.is_empty() {
            vocab = crate::fixtures::vocabulary();
        }
        let mut registry = Registry {
            next_id: 1,
            ..Default::default()
        };
        if let Some(dir) = store {
            let path = dir.join(DEFINITIONS_FILE);
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let defs: Vec<CohortDefinition> = serde_json::from_str(&text)?;
                for d in defs {
                    registry.next_id = registry.next_id.max(d.id + 1);
                    registry.cohorts.insert(
                        d.id,
                        StoredCohort {
                            definition: d,
                            result: None,
                        },
                    );
                }
            }
        }
        Ok(AppState {
            store: store.map(Path::to_owned),
            vocab,
            data: Arc::new(CohortData::from_mart(mart, opts)?),
            note_nlp: mart.records()?,
            stats: mart.records()?,
            registry: Mutex::new(registry),
        })
    }

    fn persist(&self, reg: &Registry) -> Result<()> {
        let Some(dir) = &self.store else { return Ok(()) };
        let defs: Vec<&CohortDefinition> = reg.cohorts.values().map(|c| &c.definition).collect();
        let path = dir.join(DEFINITIONS_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&defs)?).map_err(|e| Error::io(&path, e))
    }
}

/// `{code, message}` error body.
#[derive(Debug, Serialize, Deserialize)]
pub struct ApiErrorBody {
    pub code: String,
    pub message: String,
}

pub struct ApiError(StatusCode, String);

impl ApiError {
    fn not_found(what: impl Into<String>) -> Self {
        ApiError(StatusCode::NOT_FOUND, what.into())
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Validation(_) | Error::Json(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let code = match self.0 {
            StatusCode::NOT_FOUND => "not_found",
            StatusCode::UNPROCESSABLE_ENTITY => "invalid_definition",
            StatusCode::BAD_REQUEST => "bad_request",
            _ => "internal",
        };
        let body = ApiErrorBody {
            code: code.into(),
            message: self.1,
        };
        (self.0, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

#[derive(Debug, Deserialize)]
pub struct PageQuery {
    #[serde(default)]
    pub page: Option<usize>,
    #[serde(default)]
    pub page_size: Option<usize>,
}

impl PageQuery {
    fn bounds(&self, total: usize) -> (usize, usize, std::ops::Range<usize>) {
        let page = self.page.unwrap_or(1).max(1);
        let size = self.page_size.unwrap_or(DEFAULT_PAGE_SIZE).clamp(1, MAX_PAGE_SIZE);
        let start = ((page - 1) * size).min(total);
        let end = (start + size).min(total);
        (page, size, start..end)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Page<T> {
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub items: Vec<T>,
}

#[derive(Debug, Deserialize)]
pub struct ConceptQuery {
    #[serde(default)]
    pub query: String,
    #[serde(default)]
    pub page: Option<usize>,
    #[serde(default)]
    pub page_size: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CohortSummary {
    pub id: i64,
    pub name: String,
    pub generated: bool,
    pub subjects: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: i64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Generated {
    pub subjects: usize,
    pub attrition: crate::cohort::AttritionReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Variant {
    pub variant: String,
    pub count: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Variants {
    pub concept_id: i64,
    pub distinct: usize,
    pub variants: Vec<Variant>,
}

const INDEX_HTML: &str = r#"<!doctype html>
<html><head><meta charset="utf-8"><title>caremart</title></head>
<body>
<h1>caremart</h1>
<p>Cohort explorer API. Endpoints:</p>
<ul>
<li>GET /concepts?query=&amp;page=</li>
<li>GET|POST /cohorts</li>
<li>GET /cohorts/{id}</li>
<li>POST /cohorts/{id}/generate</li>
<li>GET /cohorts/{id}/results?page=</li>
<li>GET /stats</li>
<li>GET /noteconcepts/{concept_id}/variants</li>
<li>GET /status</li>
</ul>
</body></html>
"#;

async fn index() -> Html<&'static str> {
    Html(INDEX_HTML)
}

async fn concepts(State(s): State<Arc<AppState>>, Query(q): Query<ConceptQuery>) -> ApiResult<Page<Concept>> {
    let hits = s.vocab.search(&q.query);
    let paging = PageQuery {
        page: q.page,
        page_size: q.page_size,
    };
    let (page, page_size, range) = paging.bounds(hits.len());
    Ok(Json(Page {
        page,
        page_size,
        total: hits.len(),
        items: hits[range].iter().map(|c| (*c).clone()).collect(),
    }))
}

async fn create_cohort(
    State(s): State<Arc<AppState>>,
    body: Bytes,
) -> std::result::Result<(StatusCode, Json<Created>), ApiError> {
    let text = std::str::from_utf8(&body).map_err(|_| ApiError(StatusCode::BAD_REQUEST, "body is not UTF-8".into()))?;
    let mut def = CohortDefinition::parse(text)?;
    let mut reg = s.registry.lock().expect("registry lock");
    def.id = reg.next_id;
    reg.next_id += 1;
    let id = def.id;
    reg.cohorts.insert(
        id,
        StoredCohort {
            definition: def,
            result: None,
        },
    );
    s.persist(&reg)?;
    Ok((StatusCode::CREATED, Json(Created { id })))
}

async fn list_cohorts(State(s): State<Arc<AppState>>) -> ApiResult<Vec<CohortSummary>> {
    let reg = s.registry.lock().expect("registry lock");
    Ok(Json(
        reg.cohorts
            .values()
            .map(|c| CohortSummary {
                id: c.definition.id,
                name: c.definition.name.clone(),
                generated: c.result.is_some(),
                subjects: c.result.as_ref().map(|r| r.rows.len()),
            })
            .collect(),
    ))
}

async fn get_cohort(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<i64>) -> ApiResult<CohortDefinition> {
    let reg = s.registry.lock().expect("registry lock");
    reg.cohorts
        .get(&id)
        .map(|c| Json(c.definition.clone()))
        .ok_or_else(|| ApiError::not_found(format!("cohort {id}")))
}

async fn generate_cohort(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<i64>) -> ApiResult<Generated> {
    let def = {
        let reg = s.registry.lock().expect("registry lock");
        reg.cohorts
            .get(&id)
            .map(|c| c.definition.clone())
            .ok_or_else(|| ApiError::not_found(format!("cohort {id}")))?
    };
    let data = s.data.clone();
    let result = tokio::task::spawn_blocking(move || generate_from(&def, &data))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let body = Generated {
        subjects: result.rows.len(),
        attrition: result.attrition.clone(),
    };
    let mut reg = s.registry.lock().expect("registry lock");
    if let Some(c) = reg.cohorts.get_mut(&id) {
        c.result = Some(result);
    }
    Ok(Json(body))
}

async fn cohort_results(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<i64>,
    Query(q): Query<PageQuery>,
) -> ApiResult<Page<CohortRow>> {
    let reg = s.registry.lock().expect("registry lock");
    let c = reg
        .cohorts
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("cohort {id}")))?;
    let rows: &[CohortRow] = c.result.as_ref().map_or(&[], |r| r.rows.as_slice());
    let (page, page_size, range) = q.bounds(rows.len());
    Ok(Json(Page {
        page,
        page_size,
        total: rows.len(),
        items: rows[range].to_vec(),
    }))
}

async fn stats(State(s): State<Arc<AppState>>) -> ApiResult<Vec<StatRecord>> {
    Ok(Json(s.stats.clone()))
}

async fn variants(State(s): State<Arc<AppState>>, UrlPath(concept_id): UrlPath<i64>) -> ApiResult<Variants> {
    let v = nlp::distinct_variants_in(&s.note_nlp, concept_id);
    Ok(Json(Variants {
        concept_id,
        distinct: v.len(),
        variants: v
            .into_iter()
            .map(|(variant, count)| Variant { variant, count })
            .collect(),
    }))
}

async fn status(State(s): State<Arc<AppState>>) -> ApiResult<PipelineStatus> {
    match &s.store {
        Some(dir) => Ok(Json(PipelineStatus::load(dir)?)),
        None => Ok(Json(PipelineStatus::default())),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/", get(index))
        .route("/concepts", get(concepts))
        .route("/cohorts", post(create_cohort).get(list_cohorts))
        .route("/cohorts/{id}", get(get_cohort))
        .route("/cohorts/{id}/generate", post(generate_cohort))
        .route("/cohorts/{id}/results", get(cohort_results))
        .route("/stats", get(stats))
        .route("/noteconcepts/{concept_id}/variants", get(variants))
        .route("/status", get(status))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(state)
}

/// Serves the API on `0.0.0.0:port` until interrupted.
pub async fn serve(store: &Path, port: u16, opts: &GenerateOptions) -> Result<()> {
    let mart = Datamart::open(store)?;
    let state = Arc::new(AppState::new(&mart, Some(store), opts)?);
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(format!("tcp://{addr}"), e))?;
    log::info!("listening on http://{addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io(format!("tcp://{addr}"), e))
}
