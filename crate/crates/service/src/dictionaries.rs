use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::Json;
use serde::Deserialize;
use serde_json::{json, Value};

use kex::dictionary::{Dictionary, DictionaryEdit, SynsetId};

use crate::{ApiError, AppState, Shared};

type Api<T> = Result<T, ApiError>;

fn valid_lang(lang: &str) -> Api<()> {
    let ok = !lang.is_empty() && lang.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    ok.then_some(()).ok_or_else(|| ApiError::BadRequest(format!("invalid language code {lang:?}")))
}

fn lookup(state: &AppState, lang: &str) -> Api<Shared<Dictionary>> {
    state
        .dictionaries
        .read()
        .expect("dictionary table lock")
        .get(lang)
        .cloned()
        .ok_or_else(|| ApiError::NotFound(format!("dictionary {lang}")))
}

fn persist(state: &AppState, dict: &Dictionary) -> Api<()> {
    if let Some(dir) = &state.dictionary_dir {
        dict.save(dir.join(format!("{}.json", dict.language)))?;
    }
    Ok(())
}

fn to_value(dict: &Dictionary) -> Value {
    serde_json::to_value(dict).expect("dictionary serializes")
}

pub async fn list(State(state): State<Arc<AppState>>) -> Json<Value> {
    let table = state.dictionaries.read().expect("dictionary table lock");
    let items: Vec<Value> = table
        .iter()
        .map(|(lang, d)| {
            let d = d.lock().expect("dictionary lock");
            json!({"language": lang, "version": d.version, "synsets": d.len()})
        })
        .collect();
    Json(Value::Array(items))
}

pub async fn get(State(state): State<Arc<AppState>>, Path(lang): Path<String>) -> Api<Json<Value>> {
    let dict = lookup(&state, &lang)?;
    let d = dict.lock().expect("dictionary lock");
    Ok(Json(to_value(&d)))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VersionQuery {
    #[serde(default)]
    expected_version: Option<u64>,
}

/// Create or replace a whole dictionary. A replacement continues the version
/// sequence of the dictionary it replaces.
pub async fn put(
    State(state): State<Arc<AppState>>,
    Path(lang): Path<String>,
    Query(q): Query<VersionQuery>,
    body: axum::body::Bytes,
) -> Api<(StatusCode, Json<Value>)> {
    valid_lang(&lang)?;
    let mut incoming = Dictionary::from_json(&body)?;
    if incoming.language != lang {
        return Err(ApiError::BadRequest(format!(
            "body language {:?} does not match path {lang:?}",
            incoming.language
        )));
    }
    let existing = state.dictionaries.read().expect("dictionary table lock").get(&lang).cloned();
    match existing {
        Some(dict) => {
            let mut d = dict.lock().expect("dictionary lock");
            ApiError::check_version(q.expected_version, d.version)?;
            incoming.version = d.version + 1;
            persist(&state, &incoming)?;
            *d = incoming;
            Ok((StatusCode::OK, Json(to_value(&d))))
        }
        None => {
            ApiError::check_version(q.expected_version, 0)?;
            persist(&state, &incoming)?;
            let body = to_value(&incoming);
            state
                .dictionaries
                .write()
                .expect("dictionary table lock")
                .insert(lang, Arc::new(Mutex::new(incoming)));
            Ok((StatusCode::CREATED, Json(body)))
        }
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EditRequest {
    edit: DictionaryEdit,
    #[serde(default)]
    expected_version: Option<u64>,
}

fn apply(state: &AppState, lang: &str, expected: Option<u64>, edit: &DictionaryEdit) -> Api<Json<Value>> {
    let dict = lookup(state, lang)?;
    let mut d = dict.lock().expect("dictionary lock");
    ApiError::check_version(expected, d.version)?;
    let mut next = d.clone();
    let created = next.apply(edit)?;
    persist(state, &next)?;
    *d = next;
    Ok(Json(json!({"version": d.version, "created": created, "dictionary": to_value(&d)})))
}

pub async fn edit(
    State(state): State<Arc<AppState>>,
    Path(lang): Path<String>,
    Json(r): Json<EditRequest>,
) -> Api<Json<Value>> {
    apply(&state, &lang, r.expected_version, &r.edit)
}

pub async fn synset(State(state): State<Arc<AppState>>, Path((lang, sid)): Path<(String, String)>) -> Api<Json<Value>> {
    let dict = lookup(&state, &lang)?;
    let d = dict.lock().expect("dictionary lock");
    let s = d
        .get(&SynsetId::new(sid.as_str()))
        .ok_or_else(|| ApiError::NotFound(format!("synset {sid}")))?;
    Ok(Json(json!({"version": d.version, "synset": s})))
}

pub async fn remove_synset(
    State(state): State<Arc<AppState>>,
    Path((lang, sid)): Path<(String, String)>,
    Query(q): Query<VersionQuery>,
) -> Api<Json<Value>> {
    let id = SynsetId::new(sid.as_str());
    if lookup(&state, &lang)?.lock().expect("dictionary lock").get(&id).is_none() {
        return Err(ApiError::NotFound(format!("synset {sid}")));
    }
    apply(&state, &lang, q.expected_version, &DictionaryEdit::Remove { id })
}
