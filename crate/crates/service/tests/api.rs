use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tower::ServiceExt;

use kex::archive::Archive;
use kex_service::{router, AppState, ServiceConfig};

const SCHEMA: &str = r#"{"db":"document","type":"Model","repetitive":"true","text":"Document","nodes":[
    {"db":"attribute1","type":"TextField","text":"Attribute 1"},
    {"db":"attribute2","type":"NullBooleanField","text":"Attribute 2"},
    {"db":"childEntity","type":"Model","repetitive":"true","text":"Child","nodes":[
        {"db":"attribute1","type":"TextField","text":"Child attribute 1"}]}]}"#;

const GOLDEN: &str = r#"{
  "version": "2015.11.17.01",
  "document": {
    "attribute1": {"__xpath__": ["/document/attr1", "/document/attr1/@name"]},
    "attribute2": {"__xpath__": ["/document/attrBoolean"], "__conversion__": {"NO": "false"}},
    "childEntity": {
      "attribute1": {"__xpath__": ["/document/child/attr1"]},
      "__xpath__": ["/document/child"]
    },
    "__xpath__": ["/document"]
  }
}"#;

const DOC2: &str = r#"<xml>
	<document>
		<attr1 name="document2"/>
		<attrBoolean>NO</attrBoolean>
		<child>
			<attr1>Child attribute</attr1>
		</child>
	</document>
</xml>"#;

struct Reply {
    status: StatusCode,
    headers: axum::http::HeaderMap,
    bytes: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.bytes)))
    }
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, bytes }
}

fn app_with(config: ServiceConfig) -> Router {
    router(Arc::new(AppState::new(&config).unwrap()))
}

fn app() -> Router {
    app_with(ServiceConfig::default())
}

async fn new_session(app: &Router, schema: &str, mapping: Option<&str>) -> String {
    let mut body = json!({"schema": serde_json::from_str::<Value>(schema).unwrap()});
    if let Some(m) = mapping {
        body["mapping"] = serde_json::from_str(m).unwrap();
    }
    let r = call(app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(r.status, StatusCode::CREATED);
    r.json()["sessionId"].as_str().unwrap().to_string()
}

fn without_version(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("version");
    v
}

fn store_hash(dir: &std::path::Path) -> String {
    let mut h = Sha256::new();
    let mut entries: Vec<_> = walkdir::WalkDir::new(dir).into_iter().map(|e| e.unwrap()).collect();
    entries.sort_by(|a, b| a.path().cmp(b.path()));
    for e in entries {
        h.update(e.path().to_string_lossy().as_bytes());
        if e.file_type().is_file() {
            h.update(std::fs::read(e.path()).unwrap());
        }
    }
    format!("{:x}", h.finalize())
}

#[tokio::test]
async fn bind_then_export_contains_xpath() {
    let app = app();
    let id = new_session(&app, SCHEMA, None).await;
    let r = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/bind"),
        Some(json!({"schemaPath": "document.attribute1", "xpath": "/document/attr1"})),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["version"], 1);
    assert_eq!(r.json()["changed"], true);
    let m = call(&app, Method::GET, &format!("/sessions/{id}/mapping"), None).await;
    assert_eq!(m.status, StatusCode::OK);
    assert_eq!(m.headers["x-draft-version"], "1");
    assert_eq!(m.json()["document"]["attribute1"]["__xpath__"], json!(["/document/attr1"]));
}

#[tokio::test]
async fn bind_flow_reproduces_golden_mapping() {
    let app = app();
    let id = new_session(&app, SCHEMA, None).await;
    let binds = [
        ("document", "/document"),
        ("document.attribute1", "/document/attr1"),
        ("document.attribute1", "/document/attr1/@name"),
        ("document.attribute2", "/document/attrBoolean"),
        ("document.childEntity", "/document/child"),
        ("document.childEntity.attribute1", "/document/child/attr1"),
    ];
    for (i, (path, xpath)) in binds.iter().enumerate() {
        let body = json!({"schemaPath": path, "xpath": xpath, "expectedVersion": i});
        let r = call(&app, Method::POST, &format!("/sessions/{id}/bind"), Some(body)).await;
        assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.bytes));
    }
    let body = json!({"schemaPath": "document.attribute2", "from": "NO", "to": "false", "expectedVersion": 6});
    let r = call(&app, Method::POST, &format!("/sessions/{id}/conversion"), Some(body)).await;
    assert_eq!(r.status, StatusCode::OK);
    let exported = call(&app, Method::GET, &format!("/sessions/{id}/mapping"), None).await.json();
    let golden: Value = serde_json::from_str(GOLDEN).unwrap();
    assert_eq!(without_version(exported.clone()), without_version(golden));
    let version = exported["version"].as_str().unwrap();
    assert!(kex::mapping::parse_version(version).is_ok(), "{version}");
}

#[tokio::test]
async fn parse_preview_of_second_document() {
    let app = app();
    let id = new_session(&app, SCHEMA, Some(GOLDEN)).await;
    let r = call(&app, Method::POST, &format!("/sessions/{id}/parse-preview"), Some(json!({"xml": DOC2}))).await;
    assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.bytes));
    let instances = r.json()["documents"][0]["instances"].as_array().unwrap().clone();
    let docs: Vec<&Value> = instances.iter().filter(|i| i["entity"] == "document").collect();
    let children: Vec<&Value> = instances.iter().filter(|i| i["entity"] == "childEntity").collect();
    assert_eq!(docs.len(), 1);
    assert_eq!(docs[0]["attrs"]["attribute1"], "document2");
    assert_eq!(docs[0]["attrs"]["attribute2"], "false");
    assert_eq!(children.len(), 1);
    assert_eq!(children[0]["attrs"]["attribute1"], "Child attribute");
    assert_eq!(children[0]["parentRef"], json!(["document", docs[0]["floatingId"]]));
}

#[tokio::test]
async fn stale_version_conflicts_and_leaves_draft() {
    let app = app();
    let id = new_session(&app, SCHEMA, None).await;
    let first = json!({"schemaPath": "document.attribute1", "xpath": "/document/attr1", "expectedVersion": 0});
    assert_eq!(call(&app, Method::POST, &format!("/sessions/{id}/bind"), Some(first)).await.status, StatusCode::OK);
    let before = call(&app, Method::GET, &format!("/sessions/{id}"), None).await.json();
    let second = json!({"schemaPath": "document.attribute1", "xpath": "/document/attr1/@name", "expectedVersion": 0});
    let r = call(&app, Method::POST, &format!("/sessions/{id}/bind"), Some(second)).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.json()["currentVersion"], 1);
    let after = call(&app, Method::GET, &format!("/sessions/{id}"), None).await.json();
    assert_eq!(before, after);
}

#[tokio::test]
async fn errors_map_to_statuses() {
    let app = app();
    assert_eq!(call(&app, Method::GET, "/sessions/nope", None).await.status, StatusCode::NOT_FOUND);
    let id = new_session(&app, SCHEMA, None).await;
    let bad = json!({"schemaPath": "document.nope", "xpath": "/document/x"});
    let r = call(&app, Method::POST, &format!("/sessions/{id}/bind"), Some(bad)).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.json()["module"], "mapping");
    let r = call(&app, Method::POST, "/sessions", Some(json!({"schema": {"db": "x"}}))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let r = call(&app, Method::POST, &format!("/sessions/{id}/parse-preview"), Some(json!({"xml": "<a>"}))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn log_replays_to_draft() {
    let app = app();
    let id = new_session(&app, SCHEMA, None).await;
    let ops = [
        (Method::POST, "bind", json!({"schemaPath": "document", "xpath": "/document"})),
        (Method::POST, "bind", json!({"schemaPath": "document.attribute1", "xpath": "/document/attr1"})),
        (Method::POST, "bind", json!({"schemaPath": "document.attribute1", "xpath": "/document/attr1/@name"})),
        (Method::POST, "conversion", json!({"schemaPath": "document.attribute2", "from": "NO", "to": "false"})),
        (Method::DELETE, "bind", json!({"schemaPath": "document.attribute1", "xpath": "/document/attr1"})),
        (Method::DELETE, "conversion", json!({"schemaPath": "document.attribute2", "from": "NO"})),
        (Method::POST, "edits", json!({"edit": {"op": "bind", "schemaPath": "document.attribute1", "xpath": "/document/a"}})),
        (
            Method::POST,
            "edits",
            json!({"edit": {"op": "moveXPath", "schemaPath": "document.attribute1", "xpath": "/document/a", "index": 0}}),
        ),
    ];
    for (m, path, body) in ops {
        let r = call(&app, m, &format!("/sessions/{id}/{path}"), Some(body)).await;
        assert_eq!(r.status, StatusCode::OK, "{path}: {}", String::from_utf8_lossy(&r.bytes));
    }
    let session = call(&app, Method::GET, &format!("/sessions/{id}"), None).await.json();
    let log = call(&app, Method::GET, &format!("/sessions/{id}/log"), None).await.json();
    assert_eq!(log["version"], 8);

    let schema = kex::mapping::load_schema(SCHEMA.as_bytes()).unwrap();
    let base = kex::mapping::MappingFile::parse(
        serde_json::to_vec(&json!({"version": session["draft"]["version"]})).unwrap().as_slice(),
    )
    .unwrap();
    let mut replay = kex::mapping::MappingSession::from_mapping(schema, base).unwrap();
    for edit in log["edits"].as_array().unwrap() {
        replay.apply(serde_json::from_value(edit.clone()).unwrap()).unwrap();
    }
    assert_eq!(replay.draft().to_value(), session["draft"]);
    assert_eq!(session["draft"]["document"]["attribute1"]["__xpath__"], json!(["/document/a", "/document/attr1/@name"]));
}

#[tokio::test]
async fn samples_and_preview_from_archive_are_read_only() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("archive");
    let rec = {
        let archive = Archive::open(&store).unwrap();
        archive.put("t", "http://x/doc2", "text/xml", DOC2.as_bytes()).unwrap()
    };
    let app = app_with(ServiceConfig { archive: Some(store.clone()), ..Default::default() });
    let id = new_session(&app, SCHEMA, Some(GOLDEN)).await;

    let r = call(&app, Method::POST, &format!("/sessions/{id}/samples"), Some(json!({"recordIds": [rec.id]}))).await;
    assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.bytes));
    let xpaths = r.json()["samples"][0]["xpaths"].clone();
    assert!(xpaths.as_array().unwrap().contains(&json!({"xpath": "/xml/document/attr1/@name", "sample": "document2"})));

    let before_store = store_hash(&store);
    let before_session = call(&app, Method::GET, &format!("/sessions/{id}"), None).await.json();
    let r = call(&app, Method::POST, &format!("/sessions/{id}/parse-preview"), Some(json!({"recordId": rec.id}))).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["documents"][0]["instances"].as_array().unwrap().len(), 2);
    assert_eq!(store_hash(&store), before_store);
    assert_eq!(call(&app, Method::GET, &format!("/sessions/{id}"), None).await.json(), before_session);

    let records = call(&app, Method::GET, "/records?corpus=t", None).await.json();
    assert_eq!(records[0]["id"], json!(rec.id));
    assert_eq!(call(&app, Method::GET, "/records/unknown", None).await.status, StatusCode::NOT_FOUND);
    let docs = call(&app, Method::GET, &format!("/records/{}/documents", rec.id), None).await.json();
    assert_eq!(docs[0]["xml"], DOC2);
}

#[tokio::test]
async fn coverage_one_of_three() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("archive");
    Archive::open(&store)
        .unwrap()
        .put("c", "http://x/1", "text/xml", b"<r><a>1</a><b>2</b><c>3</c></r>")
        .unwrap();
    let app = app_with(ServiceConfig { archive: Some(store), ..Default::default() });
    let schema = r#"{"db":"e","type":"Model","repetitive":"true","text":"E","nodes":[
        {"db":"f","type":"TextField","text":"F"}]}"#;
    let mapping = r#"{"version":"2016.01.01.01","e":{"__xpath__":["/r"],"f":{"__xpath__":["/r/a"]}}}"#;
    let id = new_session(&app, schema, Some(mapping)).await;
    let r = call(&app, Method::GET, &format!("/validation/coverage?session={id}&corpus=c&k=5"), None).await;
    assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.bytes));
    let v = r.json();
    let ratio = v["coverage"]["ratio"].as_f64().unwrap();
    assert_eq!(ratio, 1.0 / 3.0);
    assert_eq!((ratio * 100.0).round(), 33.0);
    assert_eq!(v["coverage"]["unmapped"], json!(["/r/b", "/r/c"]));
    assert_eq!(v["unmappedSample"], json!([{"path": "/r/b", "count": 1}, {"path": "/r/c", "count": 1}]));
    let r = call(&app, Method::GET, "/validation/coverage?session=missing", None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn dictionary_crud_with_versions() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("dicts");
    let app = app_with(ServiceConfig { dictionaries: Some(dir.clone()), ..Default::default() });
    let dict = json!({"language": "da", "version": 1, "synsets": [
        {"id": "K1", "canonical": "Navn", "variants": ["Navn"]}]});
    let r = call(&app, Method::PUT, "/dictionaries/da", Some(dict)).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let edit = json!({"edit": {"op": "addSynset", "canonical": "Adresse", "variants": ["Adresse"]}, "expectedVersion": 1});
    let r = call(&app, Method::POST, "/dictionaries/da", Some(edit.clone())).await;
    assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.bytes));
    let created = r.json()["created"].as_str().unwrap().to_string();
    assert_eq!(r.json()["version"], 2);
    assert_eq!(call(&app, Method::POST, "/dictionaries/da", Some(edit)).await.status, StatusCode::CONFLICT);

    let collide = json!({"edit": {"op": "addVariant", "id": "K1", "variant": "Adresse"}});
    let r = call(&app, Method::POST, "/dictionaries/da", Some(collide)).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.json()["module"], "dictionary");

    let r = call(&app, Method::GET, &format!("/dictionaries/da/synsets/{created}"), None).await;
    assert_eq!(r.json()["synset"]["canonical"], "Adresse");
    let r = call(&app, Method::DELETE, &format!("/dictionaries/da/synsets/{created}?expectedVersion=2"), None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(call(&app, Method::GET, "/dictionaries/da/synsets/K99", None).await.status, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, Method::GET, "/dictionaries/xx", None).await.status, StatusCode::NOT_FOUND);

    let list = call(&app, Method::GET, "/dictionaries", None).await.json();
    assert_eq!(list, json!([{"language": "da", "version": 3, "synsets": 1}]));
    let saved = kex::dictionary::Dictionary::load(dir.join("da.json")).unwrap();
    assert_eq!(saved.version, 3);
    let reopened = app_with(ServiceConfig { dictionaries: Some(dir), ..Default::default() });
    assert_eq!(call(&reopened, Method::GET, "/dictionaries/da", None).await.json()["version"], 3);
}

#[tokio::test]
async fn static_bundle_is_served() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("index.html"), "<html>ui</html>").unwrap();
    let app = app_with(ServiceConfig { static_dir: Some(tmp.path().to_path_buf()), ..Default::default() });
    let r = call(&app, Method::GET, "/index.html", None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.bytes, b"<html>ui</html>");
    assert_eq!(call(&app, Method::GET, "/sessions/none", None).await.status, StatusCode::NOT_FOUND);
}
