//! HTTP render/edit service over a directory of immutable scene versions.
//!
//! Every `*.dggt` file in the scene directory is a scene whose id is the file
//! stem and whose first version is `v0`. Edits append `vN.dggt` and `vN.json`
//! under `.versions/<id>/` and never touch existing files.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use splat4d::edit::{apply_edit, list_instances, CollisionPolicy, EditError, EditNote, EditScript};
use splat4d::io::image::{encode_png, Image};
use splat4d::io::{load_scene, save_scene};
use splat4d::model::SceneSequence;
use splat4d::render::RenderSettings;

use crate::request::{render_scene, FieldError, RenderRequest, RequestError};

const VERSIONS_DIR: &str = ".versions";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionMeta {
    pub version: String,
    pub parent: Option<String>,
    #[serde(default)]
    pub notes: Vec<EditNote>,
}

#[derive(Debug, Clone)]
struct VersionEntry {
    meta: VersionMeta,
    path: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    #[error("invalid request")]
    Invalid(Vec<FieldError>),
    #[error("instance id collision")]
    Conflict(Vec<FieldError>),
    #[error("{0}")]
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody {
    errors: Vec<FieldError>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, errors) = match self {
            ServiceError::NotFound(m) => (StatusCode::NOT_FOUND, vec![FieldError::new("id", m)]),
            ServiceError::Invalid(e) => (StatusCode::UNPROCESSABLE_ENTITY, e),
            ServiceError::Conflict(e) => (StatusCode::CONFLICT, e),
            ServiceError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, vec![FieldError::new("server", m)]),
        };
        (status, Json(ErrorBody { errors })).into_response()
    }
}

fn invalid(field: &str, message: impl ToString) -> ServiceError {
    ServiceError::Invalid(vec![FieldError::new(field, message)])
}

fn version_name(n: usize) -> String {
    format!("v{n}")
}

fn parse_version(s: &str) -> Option<usize> {
    s.strip_prefix('v').unwrap_or(s).parse().ok()
}

/// Scene ids and their version chains.
#[derive(Debug)]
pub struct Registry {
    dir: PathBuf,
    scenes: BTreeMap<String, Vec<VersionEntry>>,
}

impl Registry {
    /// Scans `dir` for scenes and any versions written by earlier runs.
    pub fn scan(dir: &Path) -> std::io::Result<Self> {
        let mut scenes = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("dggt") || !path.is_file() {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_owned) else {
                continue;
            };
            let mut versions = vec![VersionEntry {
                meta: VersionMeta {
                    version: version_name(0),
                    parent: None,
                    notes: Vec::new(),
                },
                path: path.clone(),
            }];
            let vdir = dir.join(VERSIONS_DIR).join(&id);
            loop {
                let n = versions.len();
                let file = vdir.join(format!("{}.dggt", version_name(n)));
                if !file.is_file() {
                    break;
                }
                let meta = std::fs::read_to_string(vdir.join(format!("{}.json", version_name(n))))
                    .ok()
                    .and_then(|t| serde_json::from_str::<VersionMeta>(&t).ok())
                    .unwrap_or_else(|| VersionMeta {
                        version: version_name(n),
                        parent: Some(version_name(n - 1)),
                        notes: Vec::new(),
                    });
                versions.push(VersionEntry { meta, path: file });
            }
            scenes.insert(id, versions);
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            scenes,
        })
    }

    fn resolve(&self, id: &str, version: Option<&str>) -> Result<(usize, PathBuf), ServiceError> {
        let versions = self
            .scenes
            .get(id)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown scene {id:?}")))?;
        let n = match version {
            None => versions.len() - 1,
            Some(v) => parse_version(v)
                .filter(|&n| n < versions.len())
                .ok_or_else(|| ServiceError::NotFound(format!("unknown version {v:?} of scene {id:?}")))?,
        };
        Ok((n, versions[n].path.clone()))
    }
}

pub struct AppState {
    registry: Mutex<Registry>,
    cache: Mutex<HashMap<PathBuf, Arc<SceneSequence>>>,
    settings: RenderSettings,
}

impl AppState {
    pub fn new(scene_dir: &Path, settings: RenderSettings) -> std::io::Result<Arc<Self>> {
        Ok(Arc::new(Self {
            registry: Mutex::new(Registry::scan(scene_dir)?),
            cache: Mutex::new(HashMap::new()),
            settings,
        }))
    }

    fn registry(&self) -> std::sync::MutexGuard<'_, Registry> {
        self.registry.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn scene(&self, path: &Path) -> Result<Arc<SceneSequence>, ServiceError> {
        if let Some(s) = self.cache.lock().unwrap_or_else(|e| e.into_inner()).get(path) {
            return Ok(s.clone());
        }
        let seq = Arc::new(load_scene(path).map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))?);
        self.cache
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(path.to_path_buf(), seq.clone());
        Ok(seq)
    }

    fn lookup(&self, id: &str, version: Option<&str>) -> Result<(usize, Arc<SceneSequence>), ServiceError> {
        let (n, path) = self.registry().resolve(id, version)?;
        Ok((n, self.scene(&path)?))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/scenes", get(list_scenes))
        .route("/scenes/{id}/versions", get(list_versions))
        .route("/scenes/{id}/instances", get(instances))
        .route("/scenes/{id}/render", post(render_handler))
        .route("/scenes/{id}/edits", post(edit_handler))
        .with_state(state)
}

#[derive(Serialize)]
struct SceneSummary {
    id: String,
    latest: String,
    versions: Vec<String>,
}

async fn list_scenes(State(state): State<Arc<AppState>>) -> Json<Vec<SceneSummary>> {
    let reg = state.registry();
    Json(
        reg.scenes
            .iter()
            .map(|(id, v)| SceneSummary {
                id: id.clone(),
                latest: v.last().map(|e| e.meta.version.clone()).unwrap_or_default(),
                versions: v.iter().map(|e| e.meta.version.clone()).collect(),
            })
            .collect(),
    )
}

async fn list_versions(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Vec<VersionMeta>>, ServiceError> {
    let reg = state.registry();
    let v = reg
        .scenes
        .get(&id)
        .ok_or_else(|| ServiceError::NotFound(format!("unknown scene {id:?}")))?;
    Ok(Json(v.iter().map(|e| e.meta.clone()).collect()))
}

#[derive(Serialize)]
struct InstancesBody {
    version: String,
    time_span: Option<[f64; 2]>,
    instances: Vec<splat4d::edit::InstanceInfo>,
}

async fn instances(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<InstancesBody>, ServiceError> {
    let (n, seq) = state.lookup(&id, q.get("version").map(String::as_str))?;
    let ts = seq.timestamps();
    Ok(Json(InstancesBody {
        version: version_name(n),
        time_span: ts.first().zip(ts.last()).map(|(a, b)| [*a, *b]),
        instances: list_instances(&seq),
    }))
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| invalid("body", e))
}

async fn render_handler(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Response, ServiceError> {
    let req: RenderRequest = parse_body(&body)?;
    let (n, seq) = state.lookup(&id, req.version.as_deref())?;
    let settings = req.settings.apply(&state.settings);
    let (png, ms) = tokio::task::spawn_blocking(move || {
        let start = Instant::now();
        let product = render_scene(&seq, req.query_time, &req.camera, (req.width, req.height), &settings)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        let png = encode_png(&Image::Rgb(product.target.rgb))
            .map_err(|e| RequestError::Fields(vec![FieldError::new("render", e)]))?;
        Ok::<_, RequestError>((png, ms))
    })
    .await
    .map_err(|e| ServiceError::Internal(e.to_string()))?
    .map_err(|e| ServiceError::Invalid(e.field_errors()))?;
    let mut resp = (StatusCode::OK, png).into_response();
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    h.insert("x-render-ms", HeaderValue::from_str(&format!("{ms:.3}")).expect("ascii"));
    h.insert("x-scene-version", HeaderValue::from_str(&version_name(n)).expect("ascii"));
    Ok(resp)
}

fn edit_failure(k: usize, e: EditError) -> ServiceError {
    let field = format!("ops[{k}]");
    match e {
        EditError::IdCollision(_) => ServiceError::Conflict(vec![FieldError::new(format!("{field}.instance_id"), e)]),
        EditError::UnknownInstance { .. } | EditError::NotDynamic(_) => {
            invalid(&format!("{field}.instance_id"), crate::commands::edit_message(&e))
        }
        EditError::NonFiniteDelta => invalid(&format!("{field}.delta"), e),
        EditError::InvalidTimeRange(..) => invalid(&format!("{field}.time_range"), e),
        EditError::InvalidPayload(_) => invalid(&format!("{field}.payload"), e),
    }
}

#[derive(Serialize)]
struct EditCreated {
    version: String,
    parent: String,
    notes: Vec<EditNote>,
}

async fn edit_handler(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<HashMap<String, String>>,
    body: Bytes,
) -> Result<Response, ServiceError> {
    let script: EditScript = parse_body(&body)?;
    if let Some(base) = &script.base_scene {
        if base != &id {
            return Err(invalid("base_scene", format!("script targets {base:?}, not {id:?}")));
        }
    }
    let policy = match q.get("on_collision").map(String::as_str) {
        None | Some("reject") => CollisionPolicy::Reject,
        Some("remap") => CollisionPolicy::Remap,
        Some(other) => return Err(invalid("on_collision", format!("expected remap or reject, got {other:?}"))),
    };
    let (parent, base) = state.lookup(&id, q.get("version").map(String::as_str))?;
    let created = tokio::task::spawn_blocking(move || {
        let mut cur = (*base).clone();
        let mut notes = Vec::new();
        for (k, op) in script.ops.iter().enumerate() {
            let (next, note) = apply_edit(&cur, op, policy).map_err(|e| edit_failure(k, e))?;
            cur = next;
            notes.extend(note);
        }
        let mut reg = state.registry();
        let vdir = reg.dir.join(VERSIONS_DIR).join(&id);
        std::fs::create_dir_all(&vdir).map_err(|e| ServiceError::Internal(e.to_string()))?;
        let versions = reg.scenes.get_mut(&id).ok_or_else(|| ServiceError::NotFound(id.clone()))?;
        let n = versions.len();
        let meta = VersionMeta {
            version: version_name(n),
            parent: Some(version_name(parent)),
            notes,
        };
        let path = vdir.join(format!("{}.dggt", meta.version));
        let meta_text = serde_json::to_string_pretty(&meta).map_err(|e| ServiceError::Internal(e.to_string()))?;
        std::fs::write(vdir.join(format!("{}.json", meta.version)), meta_text)
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        save_scene(&cur, &path).map_err(|e| ServiceError::Internal(e.to_string()))?;
        versions.push(VersionEntry {
            meta: meta.clone(),
            path,
        });
        Ok::<_, ServiceError>(EditCreated {
            version: meta.version,
            parent: version_name(parent),
            notes: meta.notes,
        })
    })
    .await
    .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

/// Serves `router(state)` on `listener` until the process is stopped.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
