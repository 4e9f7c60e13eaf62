use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::Json;
use serde::Deserialize;
use serde_json::{json, Value};

use kex::archive::Selection;
use kex::engine::NamedDoc;
use kex::pipeline::run_pipeline;
use kex::validation::{collect_xpaths, coverage as coverage_report, sample_unmapped, DEFAULT_EXAMPLES};

use crate::{ApiError, AppState};

type Api<T> = Result<T, ApiError>;

/// XML documents the pipeline produces for one archive record.
pub(crate) async fn load_documents(state: &Arc<AppState>, id: &str) -> Api<Vec<NamedDoc>> {
    let archive = state.archive()?.clone();
    let pipeline = state.pipeline.clone();
    let id = id.to_string();
    state
        .blocking(move || {
            let record = archive.record(&id)?;
            Ok(run_pipeline(&pipeline, &record, &archive)?)
        })
        .await
}

#[derive(Deserialize)]
pub struct CorpusQuery {
    #[serde(default)]
    corpus: Option<String>,
}

fn selection(text: Option<&str>) -> Api<Selection> {
    Ok(Selection::parse(text.unwrap_or("*"))?)
}

pub async fn list(State(state): State<Arc<AppState>>, Query(q): Query<CorpusQuery>) -> Api<Json<Value>> {
    let records = state.archive()?.select(&selection(q.corpus.as_deref())?)?;
    Ok(Json(serde_json::to_value(records).expect("records serialize")))
}

pub async fn get(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Api<Json<Value>> {
    let record = state.archive()?.record(&id)?;
    Ok(Json(serde_json::to_value(record).expect("record serializes")))
}

pub async fn documents(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Api<Json<Value>> {
    let docs = load_documents(&state, &id).await?;
    let docs: Vec<Value> = docs
        .into_iter()
        .map(|d| json!({"name": d.name, "xml": String::from_utf8_lossy(&d.bytes)}))
        .collect();
    Ok(Json(Value::Array(docs)))
}

#[derive(Deserialize)]
pub struct CoverageQuery {
    session: String,
    #[serde(default)]
    corpus: Option<String>,
    #[serde(default = "default_k")]
    k: usize,
}

fn default_k() -> usize {
    10
}

/// Coverage of the session draft over a corpus selection, or over the
/// session samples when no corpus is given. Records the pipeline rejects are
/// listed under `failures` and left out of the statistics.
pub async fn coverage(State(state): State<Arc<AppState>>, Query(q): Query<CoverageQuery>) -> Api<Json<Value>> {
    let session = state.session(&q.session)?;
    let (draft, version, samples) = {
        let s = session.lock().expect("session lock");
        let samples: Vec<(String, Vec<u8>)> =
            s.samples().iter().map(|x| (x.name.clone(), x.xml.clone().into_bytes())).collect();
        (s.draft().clone(), s.revision(), samples)
    };
    let (docs, failures) = match q.corpus.as_deref() {
        None => (samples, Vec::new()),
        Some(text) => {
            let sel = selection(Some(text))?;
            let archive = state.archive()?.clone();
            let pipeline = state.pipeline.clone();
            state
                .blocking(move || {
                    let mut docs = Vec::new();
                    let mut failures = Vec::new();
                    for record in archive.select(&sel)? {
                        match run_pipeline(&pipeline, &record, &archive) {
                            Ok(out) => docs.extend(out.into_iter().map(|d| (d.name, d.bytes))),
                            Err(e) => failures.push(json!({"recordId": record.id, "error": e.to_string()})),
                        }
                    }
                    Ok((docs, failures))
                })
                .await?
        }
    };
    let documents = docs.len();
    let (report, sample, skipped) = state
        .blocking(move || {
            let stats = collect_xpaths(&docs, DEFAULT_EXAMPLES);
            let report = coverage_report(&stats, &draft);
            let sample = sample_unmapped(&report, &stats, q.k);
            Ok((report, sample, stats.skipped))
        })
        .await?;
    let sample: Vec<Value> = sample.into_iter().map(|(p, n)| json!({"path": p, "count": n})).collect();
    Ok(Json(json!({
        "sessionId": q.session,
        "version": version,
        "documents": documents,
        "coverage": report,
        "unmappedSample": sample,
        "skipped": skipped,
        "failures": failures,
    })))
}
