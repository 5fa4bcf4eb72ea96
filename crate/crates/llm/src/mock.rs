//! A scripted HTTP server standing in for a model provider in tests and
//! offline demos. It records every request it receives.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::json;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockResponse {
    pub status: u16,
    pub body: String,
}

impl MockResponse {
    pub fn new(status: u16, body: impl Into<String>) -> Self {
        Self {
            status,
            body: body.into(),
        }
    }

    /// A successful chat completion whose first choice says `content`.
    pub fn chat(content: &str) -> Self {
        Self::new(
            200,
            json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]}).to_string(),
        )
    }

    pub fn embedding(vector: &[f64]) -> Self {
        Self::new(200, json!({"data": [{"index": 0, "embedding": vector}]}).to_string())
    }

    pub fn status(status: u16) -> Self {
        Self::new(status, json!({"error": {"message": format!("status {status}")}}).to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl RecordedRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

type Handler = Box<dyn FnMut(&RecordedRequest) -> MockResponse + Send>;

pub struct MockServer {
    server: Arc<tiny_http::Server>,
    port: u16,
    requests: Arc<Mutex<Vec<RecordedRequest>>>,
    worker: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Answers requests with `script` in order; once it runs out, every
    /// further request gets a 404.
    pub fn scripted(script: Vec<MockResponse>) -> std::io::Result<Self> {
        let mut queue: VecDeque<MockResponse> = script.into();
        Self::with_handler(move |_| {
            queue
                .pop_front()
                .unwrap_or_else(|| MockResponse::new(404, "mock script exhausted"))
        })
    }

    /// Answers every request with whatever `handler` returns.
    pub fn with_handler<F>(handler: F) -> std::io::Result<Self>
    where
        F: FnMut(&RecordedRequest) -> MockResponse + Send + 'static,
    {
        let server = tiny_http::Server::http("127.0.0.1:0").map_err(std::io::Error::other)?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| std::io::Error::other("mock server has no TCP address"))?;
        let server = Arc::new(server);
        let requests = Arc::new(Mutex::new(Vec::new()));
        let worker = {
            let server = Arc::clone(&server);
            let requests = Arc::clone(&requests);
            let mut handler: Handler = Box::new(handler);
            std::thread::spawn(move || {
                for mut request in server.incoming_requests() {
                    let mut body = String::new();
                    let _ = request.as_reader().read_to_string(&mut body);
                    let recorded = RecordedRequest {
                        method: request.method().to_string(),
                        path: request.url().to_string(),
                        headers: request
                            .headers()
                            .iter()
                            .map(|h| (h.field.to_string(), h.value.to_string()))
                            .collect(),
                        body,
                    };
                    let reply = handler(&recorded);
                    requests.lock().unwrap_or_else(|e| e.into_inner()).push(recorded);
                    let mut response = tiny_http::Response::from_string(reply.body).with_status_code(reply.status);
                    if let Ok(h) = tiny_http::Header::from_bytes("Content-Type", "application/json") {
                        response = response.with_header(h);
                    }
                    let _ = request.respond(response);
                }
            })
        };
        Ok(Self {
            server,
            port,
            requests,
            worker: Some(worker),
        })
    }

    /// Base URL to put in an endpoint config, e.g. `http://127.0.0.1:PORT/v1`.
    pub fn base_url(&self) -> String {
        format!("http://127.0.0.1:{}/v1", self.port)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.requests.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn call_count(&self) -> usize {
        self.requests.lock().unwrap_or_else(|e| e.into_inner()).len()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
