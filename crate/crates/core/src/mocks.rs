//! In-process HTTP stand-ins for the external services: VQA, script sandbox and
//! chat completions. Each binds an ephemeral localhost port and stops on drop.
//!
//! The sandbox stand-in does not execute scripts. It reads two conventions from
//! the script text: a line `RESULT = <json>` becomes `stdout_structure`, and each
//! `SAVE = "<file name>"` line writes that file into `artifact_dir` (the result
//! JSON, or a placeholder image for `.png`). A script that calls `savefig` with a
//! chart spec as `inputs` saves the spec's `output_path`. A line starting with
//! `raise` fails the run.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use base64::Engine as _;
use serde_json::{json, Value};
use tokio::task::JoinHandle;

use crate::builtin::VqaTable;
use crate::literal;

/// A running mock; the server task is aborted on drop.
pub struct MockServer {
    addr: SocketAddr,
    handle: JoinHandle<()>,
}

impl MockServer {
    pub async fn spawn(router: Router) -> std::io::Result<Self> {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let handle = tokio::spawn(async move {
            let _ = axum::serve(listener, router).await;
        });
        Ok(Self { addr, handle })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.handle.abort();
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({"error": message.into()}))).into_response()
}

// ---- VQA ----

#[derive(Clone)]
struct VqaState {
    table: Arc<VqaTable>,
    media_root: Option<PathBuf>,
    delay: Duration,
    requests: Arc<AtomicUsize>,
}

/// `POST /vqa` answering from `table`. Inline images are matched to a file under
/// `media_root` with identical bytes.
pub fn vqa_router(table: VqaTable, media_root: Option<PathBuf>, delay: Duration) -> (Router, Arc<AtomicUsize>) {
    let requests = Arc::new(AtomicUsize::new(0));
    let state = VqaState {
        table: Arc::new(table),
        media_root,
        delay,
        requests: Arc::clone(&requests),
    };
    (Router::new().route("/vqa", post(vqa_handler)).with_state(state), requests)
}

async fn vqa_handler(State(s): State<VqaState>, Json(body): Json<Value>) -> Response {
    s.requests.fetch_add(1, Ordering::SeqCst);
    if !s.delay.is_zero() {
        tokio::time::sleep(s.delay).await;
    }
    let Some(question) = body.get("question").and_then(Value::as_str) else {
        return error(StatusCode::BAD_REQUEST, "missing question");
    };
    let image = if let Some(p) = body.get("image_path").and_then(Value::as_str) {
        p.to_string()
    } else if let Some(b64) = body.get("image_b64").and_then(Value::as_str) {
        let Ok(bytes) = base64::engine::general_purpose::STANDARD.decode(b64) else {
            return error(StatusCode::BAD_REQUEST, "image_b64 is not base64");
        };
        match s.media_root.as_deref().and_then(|root| find_by_bytes(root, &bytes)) {
            Some(p) => p,
            None => return error(StatusCode::NOT_FOUND, "unknown image bytes"),
        }
    } else {
        return error(StatusCode::BAD_REQUEST, "missing image_path or image_b64");
    };
    match s.table.lookup(question, &image) {
        Ok(a) => Json(serde_json::to_value(a).expect("answer serializes")).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

fn find_by_bytes(root: &Path, bytes: &[u8]) -> Option<String> {
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let mut entries: Vec<_> = std::fs::read_dir(&dir).ok()?.filter_map(Result::ok).map(|e| e.path()).collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                stack.push(path);
            } else if std::fs::read(&path).ok().as_deref() == Some(bytes) {
                return path.strip_prefix(root).ok().map(|p| p.to_string_lossy().into_owned());
            }
        }
    }
    None
}

// ---- sandbox ----

/// `POST /run` following the RESULT/SAVE convention described in the module docs.
pub fn sandbox_router() -> (Router, Arc<AtomicUsize>) {
    let requests = Arc::new(AtomicUsize::new(0));
    (
        Router::new().route("/run", post(sandbox_handler)).with_state(Arc::clone(&requests)),
        requests,
    )
}

const PNG_STUB: &[u8] = &[
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00,
    0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x06, 0x00, 0x00, 0x00, 0x1f, 0x15, 0xc4, 0x89, 0x00, 0x00, 0x00,
    0x0d, 0x49, 0x44, 0x41, 0x54, 0x78, 0xda, 0x63, 0x64, 0x60, 0xf8, 0x5f, 0x0f, 0x00, 0x02, 0x87, 0x01, 0x80,
    0xeb, 0x47, 0xba, 0x92, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82,
];

async fn sandbox_handler(State(requests): State<Arc<AtomicUsize>>, Json(body): Json<Value>) -> Response {
    requests.fetch_add(1, Ordering::SeqCst);
    let script = body.get("script").and_then(Value::as_str).unwrap_or_default();
    let Some(dir) = body.get("artifact_dir").and_then(Value::as_str).map(PathBuf::from) else {
        return error(StatusCode::BAD_REQUEST, "missing artifact_dir");
    };
    if let Some(line) = script.lines().find(|l| l.trim_start().starts_with("raise")) {
        return error(StatusCode::UNPROCESSABLE_ENTITY, format!("Traceback: {}", line.trim()));
    }
    let mut result = Value::Null;
    let mut saves = Vec::new();
    for line in script.lines() {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix("RESULT") {
            if let Some(v) = rest.trim_start().strip_prefix('=').and_then(|r| literal::parse_value(r.trim())) {
                result = v;
            }
        } else if let Some(rest) = t.strip_prefix("SAVE") {
            if let Some(Value::String(name)) = rest.trim_start().strip_prefix('=').and_then(|r| literal::parse_value(r.trim())) {
                saves.push(name);
            }
        }
    }
    if script.contains("savefig") {
        if let Some(name) = body.pointer("/inputs/output_path").and_then(Value::as_str) {
            saves.push(name.to_string());
            result = json!({"saved": name});
        }
    }
    if let Err(e) = std::fs::create_dir_all(&dir) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    }
    let mut files = Vec::new();
    for name in saves {
        if name.contains(['/', '\\']) || name.starts_with('.') {
            return error(StatusCode::BAD_REQUEST, format!("refusing to write {name}"));
        }
        let path = dir.join(&name);
        let bytes = if name.ends_with(".png") {
            PNG_STUB.to_vec()
        } else {
            serde_json::to_vec_pretty(&result).expect("value serializes")
        };
        if let Err(e) = std::fs::write(&path, bytes) {
            return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
        }
        files.push(path.to_string_lossy().into_owned());
    }
    Json(json!({"stdout_structure": result, "files": files})).into_response()
}

// ---- chat completions ----

/// What the chat mock saw and how it should misbehave.
#[derive(Debug, Default)]
pub struct LlmMockState {
    responses: Vec<String>,
    /// Status codes returned by the first requests, in order, before normal service.
    failures: Vec<u16>,
    served: usize,
    pub requests: Vec<Value>,
    pub auth_headers: Vec<Option<String>>,
}

/// `POST /chat/completions` replaying `responses` in order (the last one
/// repeats) after the scripted `failures`. Usage counts words of the request
/// and reply.
pub fn llm_router(responses: Vec<String>, failures: Vec<u16>) -> (Router, Arc<Mutex<LlmMockState>>) {
    let state = Arc::new(Mutex::new(LlmMockState {
        responses,
        failures,
        ..Default::default()
    }));
    (
        Router::new().route("/chat/completions", post(llm_handler)).with_state(Arc::clone(&state)),
        state,
    )
}

async fn llm_handler(State(state): State<Arc<Mutex<LlmMockState>>>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    let mut s = state.lock().expect("mock lock");
    let n = s.requests.len();
    s.requests.push(body.clone());
    s.auth_headers.push(headers.get("authorization").and_then(|v| v.to_str().ok()).map(str::to_string));
    if let Some(code) = s.failures.get(n).copied() {
        let status = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        return error(status, format!("scripted failure {code}"));
    }
    let idx = s.served.min(s.responses.len().saturating_sub(1));
    s.served += 1;
    let Some(text) = s.responses.get(idx).cloned() else {
        return error(StatusCode::INTERNAL_SERVER_ERROR, "no responses configured");
    };
    let prompt_tokens: usize = body
        .get("messages")
        .and_then(Value::as_array)
        .map(|ms| {
            ms.iter()
                .filter_map(|m| m.get("content").and_then(Value::as_str))
                .map(|c| c.split_whitespace().count())
                .sum()
        })
        .unwrap_or(0);
    Json(json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": text.split_whitespace().count()},
    }))
    .into_response()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::{
        ChartKind, ChartRenderer, ChartSpec, HttpVqaClient, SandboxClient, SandboxRenderer, SandboxRequest, Series,
        VqaClient, VqaMode, VqaRequest,
    };
    use crate::llm::{CompletionRequest, HttpBackend, HttpBackendConfig, LlmBackend, LlmError, Message, Role, TemplateId, Vars};

    fn table() -> VqaTable {
        serde_json::from_value(json!({"entries": [
            {"question": "Does the image depict war?", "image": "images/img_3.jpg", "answer": "yes", "confidence": 0.9},
            {"question": {"contains": "war"}, "image": "images/img_1.jpg", "answer": "no"}
        ]}))
        .unwrap()
    }

    #[tokio::test]
    async fn vqa_path_and_inline_modes() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("images")).unwrap();
        std::fs::write(dir.path().join("images/img_3.jpg"), b"three").unwrap();
        let (router, hits) = vqa_router(table(), Some(dir.path().into()), Duration::ZERO);
        let server = MockServer::spawn(router).await.unwrap();
        let req = VqaRequest {
            question: "Does the image depict war?".into(),
            image_path: "images/img_3.jpg".into(),
            resolved: dir.path().join("images/img_3.jpg"),
        };
        for mode in [VqaMode::Path, VqaMode::Inline] {
            let client = HttpVqaClient::new(server.url("/vqa"), mode, Duration::from_secs(5)).unwrap();
            let a = client.ask(&req).await.unwrap();
            assert_eq!((a.answer.as_str(), a.confidence), ("yes", Some(0.9)));
        }
        assert_eq!(hits.load(Ordering::SeqCst), 2);
        let missing = VqaRequest { image_path: "images/img_9.jpg".into(), resolved: dir.path().join("images/img_9.jpg"), ..req };
        let client = HttpVqaClient::new(server.url("/vqa"), VqaMode::Path, Duration::from_secs(5)).unwrap();
        assert!(client.ask(&missing).await.is_err());
    }

    #[tokio::test]
    async fn sandbox_result_and_save() {
        let dir = tempfile::tempdir().unwrap();
        let (router, _) = sandbox_router();
        let server = MockServer::spawn(router).await.unwrap();
        let client = SandboxClient::new(&server.url("/run"), Duration::from_secs(5)).unwrap();
        let reply = client
            .run(&SandboxRequest {
                script: "import json\nRESULT = {'16th': 1, '18th': 2}\nSAVE = 'counts.json'\nprint(json.dumps(RESULT))".into(),
                inputs: json!([]),
                artifact_dir: dir.path().into(),
            })
            .await
            .unwrap();
        assert_eq!(reply.stdout_structure, json!({"16th": 1, "18th": 2}));
        let saved: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("counts.json")).unwrap()).unwrap();
        assert_eq!(saved, reply.stdout_structure);

        let err = client
            .run(&SandboxRequest { script: "raise ValueError('bad')".into(), inputs: Value::Null, artifact_dir: dir.path().into() })
            .await
            .unwrap_err();
        assert!(err.message.contains("ValueError"));
    }

    #[tokio::test]
    async fn sandbox_renderer_saves_chart() {
        let dir = tempfile::tempdir().unwrap();
        let (router, _) = sandbox_router();
        let server = MockServer::spawn(router).await.unwrap();
        let client = Arc::new(SandboxClient::new(&server.url("/run"), Duration::from_secs(5)).unwrap());
        let spec = ChartSpec {
            kind: ChartKind::Bar,
            title: "t".into(),
            x_label: String::new(),
            y_label: String::new(),
            categories: vec!["a".into()],
            series: vec![Series { label: "s".into(), values: vec![1.0] }],
            output_path: "c.png".into(),
        };
        SandboxRenderer::new(client).render(&spec, &dir.path().join("c.png")).await.unwrap();
        assert!(std::fs::read(dir.path().join("c.png")).unwrap().starts_with(b"\x89PNG"));
    }

    fn backend(url: &str, retries: u32, key_env: Option<&str>) -> Result<HttpBackend, LlmError> {
        HttpBackend::new(HttpBackendConfig {
            base_url: url.into(),
            model: "test-model".into(),
            api_key_env: key_env.map(str::to_string),
            max_retries: retries,
            backoff_ms: 1,
            timeout_s: 5,
        })
    }

    async fn ask(b: &HttpBackend) -> Result<crate::llm::BackendReply, LlmError> {
        let vars = Vars::new();
        let messages = [Message { role: Role::User, content: "hello there".into() }];
        b.complete(CompletionRequest { template: TemplateId::Planner, vars: &vars, messages: &messages }).await
    }

    #[tokio::test]
    async fn chat_backend_retries_then_succeeds() {
        let (router, state) = llm_router(vec!["done".into()], vec![429, 503]);
        let server = MockServer::spawn(router).await.unwrap();
        std::env::set_var("LAKEPLAN_TEST_KEY_A", "secret");
        let b = backend(&server.url(""), 3, Some("LAKEPLAN_TEST_KEY_A")).unwrap();
        let reply = ask(&b).await.unwrap();
        assert_eq!((reply.text.as_str(), reply.retry_count), ("done", 2));
        assert_eq!((reply.prompt_tokens, reply.completion_tokens), (Some(2), Some(1)));
        let s = state.lock().unwrap();
        assert_eq!(s.requests.len(), 3);
        assert_eq!(s.auth_headers[0].as_deref(), Some("Bearer secret"));
        assert_eq!(s.requests[0]["model"], json!("test-model"));
    }

    #[tokio::test]
    async fn chat_backend_rate_limit_exhausts() {
        let (router, _) = llm_router(vec!["never".into()], vec![429, 429, 429]);
        let server = MockServer::spawn(router).await.unwrap();
        let b = backend(&server.url(""), 2, None).unwrap();
        assert!(matches!(ask(&b).await, Err(LlmError::RateLimit { retries: 2 })));
    }

    #[tokio::test]
    async fn chat_backend_auth_failure_is_not_retried() {
        let (router, state) = llm_router(vec!["x".into()], vec![401]);
        let server = MockServer::spawn(router).await.unwrap();
        let b = backend(&server.url(""), 3, None).unwrap();
        assert!(matches!(ask(&b).await, Err(LlmError::Auth(_))));
        assert_eq!(state.lock().unwrap().requests.len(), 1);
        assert!(matches!(backend("http://x", 0, Some("LAKEPLAN_TEST_KEY_UNSET")), Err(LlmError::Auth(_))));
    }
}
