use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use kex::engine::{parse_preview as preview_doc, EntityInstance, NamedDoc};
use kex::mapping::{compile, load_schema, MappingFile, MappingSession, SessionEdit, XPathSample};

use crate::records::load_documents;
use crate::{ApiError, AppState, Shared};

/// Header carrying the draft version next to an exported mapping body.
pub const VERSION_HEADER: &str = "x-draft-version";

type Api<T> = Result<T, ApiError>;

#[derive(Deserialize)]
pub struct CreateSession {
    schema: Value,
    #[serde(default)]
    mapping: Option<Value>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DraftResponse {
    session_id: String,
    version: u64,
    changed: bool,
    draft: Value,
}

fn draft_response(id: &str, s: &MappingSession, changed: bool) -> DraftResponse {
    DraftResponse { session_id: id.to_string(), version: s.revision(), changed, draft: s.draft().to_value() }
}

fn locked(session: &Shared<MappingSession>) -> std::sync::MutexGuard<'_, MappingSession> {
    session.lock().expect("session lock")
}

pub async fn create(State(state): State<Arc<AppState>>, Json(req): Json<CreateSession>) -> Api<Response> {
    let schema = load_schema(req.schema.to_string().as_bytes())?;
    let session = match req.mapping {
        Some(m) => MappingSession::from_mapping(schema, MappingFile::parse(m.to_string().as_bytes())?)?,
        None => MappingSession::new(schema),
    };
    let id = state.new_session_id();
    let version = session.revision();
    state
        .sessions
        .write()
        .expect("session table lock")
        .insert(id.clone(), Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(json!({"sessionId": id, "version": version})) ).into_response())
}

pub async fn get(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Api<Json<Value>> {
    let session = state.session(&id)?;
    let s = locked(&session);
    Ok(Json(json!({
        "sessionId": id,
        "version": s.revision(),
        "schema": serde_json::to_value(s.schema()).map_err(|e| ApiError::Internal(e.to_string()))?,
        "samples": s.samples().iter().map(|x| &x.name).collect::<Vec<_>>(),
        "draft": s.draft().to_value(),
        "edits": s.log().len(),
    })))
}

pub async fn remove(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Api<StatusCode> {
    match state.sessions.write().expect("session table lock").remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::NotFound(format!("session {id}"))),
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AddSamples {
    #[serde(default)]
    xml: Option<String>,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    record_ids: Vec<String>,
}

#[derive(Serialize)]
struct SampleXPaths {
    name: String,
    xpaths: Vec<XPathSample>,
}

/// Add samples given inline or as archive records run through the pipeline,
/// answering with the enumerated paths and a sample value for each.
pub async fn add_samples(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<AddSamples>,
) -> Api<Json<Value>> {
    let session = state.session(&id)?;
    let mut docs = Vec::new();
    if let Some(xml) = req.xml {
        let name = req.name.unwrap_or_else(|| format!("sample{}", locked(&session).samples().len() + 1));
        docs.push((name, xml));
    } else if req.record_ids.is_empty() {
        return Err(ApiError::BadRequest("either xml or recordIds is required".into()));
    }
    for rid in &req.record_ids {
        for doc in load_documents(&state, rid).await? {
            let xml = String::from_utf8(doc.bytes).map_err(|e| ApiError::Internal(e.to_string()))?;
            docs.push((doc.name, xml));
        }
    }
    let mut s = locked(&session);
    let mut out = Vec::new();
    for (name, xml) in docs {
        let xpaths = s.add_sample(name.clone(), xml)?;
        out.push(SampleXPaths { name, xpaths });
    }
    Ok(Json(json!({"sessionId": id, "version": s.revision(), "samples": out})))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BindRequest {
    schema_path: String,
    xpath: String,
    #[serde(default)]
    expected_version: Option<u64>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConversionRequest {
    schema_path: String,
    from: String,
    #[serde(default)]
    to: Option<String>,
    #[serde(default)]
    expected_version: Option<u64>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EditRequest {
    edit: SessionEdit,
    #[serde(default)]
    expected_version: Option<u64>,
}

fn write(state: &AppState, id: &str, expected: Option<u64>, edit: SessionEdit) -> Api<Json<DraftResponse>> {
    let session = state.session(id)?;
    let mut s = locked(&session);
    ApiError::check_version(expected, s.revision())?;
    let changed = s.apply(edit)?;
    Ok(Json(draft_response(id, &s, changed)))
}

pub async fn bind(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(r): Json<BindRequest>,
) -> Api<Json<DraftResponse>> {
    write(&state, &id, r.expected_version, SessionEdit::Bind { schema_path: r.schema_path, xpath: r.xpath })
}

pub async fn unbind(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(r): Json<BindRequest>,
) -> Api<Json<DraftResponse>> {
    write(&state, &id, r.expected_version, SessionEdit::Unbind { schema_path: r.schema_path, xpath: r.xpath })
}

pub async fn set_conversion(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(r): Json<ConversionRequest>,
) -> Api<Json<DraftResponse>> {
    let to = r.to.ok_or_else(|| ApiError::BadRequest("missing field `to`".into()))?;
    write(&state, &id, r.expected_version, SessionEdit::SetConversion { schema_path: r.schema_path, from: r.from, to })
}

pub async fn remove_conversion(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(r): Json<ConversionRequest>,
) -> Api<Json<DraftResponse>> {
    write(&state, &id, r.expected_version, SessionEdit::RemoveConversion { schema_path: r.schema_path, from: r.from })
}

/// Any session edit, including xpath reordering.
pub async fn edit(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(r): Json<EditRequest>,
) -> Api<Json<DraftResponse>> {
    write(&state, &id, r.expected_version, r.edit)
}

/// The draft in the mapping file format. The body is exactly what the UI
/// offers for download.
pub async fn mapping(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Api<Response> {
    let session = state.session(&id)?;
    let mut s = locked(&session);
    let body = s.export();
    let mut resp = body.into_response();
    resp.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    resp.headers_mut().insert(VERSION_HEADER, HeaderValue::from(s.revision()));
    Ok(resp)
}

pub async fn log(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Api<Json<Value>> {
    let session = state.session(&id)?;
    let s = locked(&session);
    Ok(Json(json!({"sessionId": id, "version": s.revision(), "edits": s.log()})))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PreviewRequest {
    #[serde(default)]
    xml: Option<String>,
    #[serde(default)]
    record_id: Option<String>,
    /// Name of a sample already added to the session.
    #[serde(default)]
    sample: Option<String>,
}

#[derive(Serialize)]
struct PreviewDoc {
    name: String,
    instances: Vec<EntityInstance>,
}

/// Dry-run the engine over one document with the current draft. Nothing is
/// stored and the session is not modified.
pub async fn parse_preview(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<PreviewRequest>,
) -> Api<Json<Value>> {
    let session = state.session(&id)?;
    let (plan, version, sample) = {
        let s = locked(&session);
        let plan = compile(s.draft(), s.schema())?;
        let sample = match &req.sample {
            Some(name) => Some(
                s.samples()
                    .iter()
                    .find(|x| &x.name == name)
                    .map(|x| NamedDoc { name: x.name.clone(), bytes: x.xml.clone().into_bytes() })
                    .ok_or_else(|| ApiError::NotFound(format!("sample {name}")))?,
            ),
            None => None,
        };
        (plan, s.revision(), sample)
    };
    let docs = match (req.xml, req.record_id, sample) {
        (Some(xml), None, None) => vec![NamedDoc { name: "inline".into(), bytes: xml.into_bytes() }],
        (None, Some(rid), None) => load_documents(&state, &rid).await?,
        (None, None, Some(doc)) => vec![doc],
        _ => return Err(ApiError::BadRequest("exactly one of xml, recordId or sample is required".into())),
    };
    let out = state
        .blocking(move || {
            docs.into_iter()
                .map(|d| Ok(PreviewDoc { instances: preview_doc(&d.bytes, &plan)?, name: d.name }))
                .collect::<Api<Vec<_>>>()
        })
        .await?;
    Ok(Json(json!({"sessionId": id, "version": version, "documents": out})))
}
