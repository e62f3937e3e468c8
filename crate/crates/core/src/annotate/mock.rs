//! A small in-process HTTP server speaking the chat-completions protocol.
//!
//! Used by the test suites and by `--mock-llm` runs of the CLI. Each
//! connection carries one request (`Connection: close`).

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: Value,
}

impl RecordedRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    /// Content of the last user message.
    pub fn user_text(&self) -> Option<&str> {
        self.body["messages"]
            .as_array()?
            .iter()
            .rev()
            .find(|m| m["role"] == "user")?["content"]
            .as_str()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockResponse {
    pub status: u16,
    pub body: String,
}

impl MockResponse {
    pub fn label(text: &str) -> Self {
        MockResponse {
            status: 200,
            body: json!({
                "id": "chatcmpl-mock",
                "object": "chat.completion",
                "choices": [{
                    "index": 0,
                    "message": { "role": "assistant", "content": text },
                    "finish_reason": "stop"
                }]
            })
            .to_string(),
        }
    }

    /// Azure-style 400 content management policy rejection.
    pub fn content_filter() -> Self {
        MockResponse {
            status: 400,
            body: json!({
                "error": {
                    "message": "The response was filtered due to the prompt triggering content management policy.",
                    "type": null,
                    "param": "prompt",
                    "code": "content_filter",
                    "status": 400
                }
            })
            .to_string(),
        }
    }

    pub fn rate_limited() -> Self {
        MockResponse {
            status: 429,
            body: json!({ "error": { "code": "429", "message": "Rate limit exceeded" } }).to_string(),
        }
    }

    pub fn server_error() -> Self {
        MockResponse {
            status: 500,
            body: json!({ "error": { "message": "internal error" } }).to_string(),
        }
    }

    pub fn raw(status: u16, body: &str) -> Self {
        MockResponse { status, body: body.to_owned() }
    }
}

type Responder = dyn Fn(&RecordedRequest) -> MockResponse + Send + Sync;

pub struct MockLlmServer {
    addr: SocketAddr,
    requests: Arc<Mutex<Vec<RecordedRequest>>>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockLlmServer {
    /// Serve every request through `responder`.
    pub fn start<F>(responder: F) -> std::io::Result<Self>
    where
        F: Fn(&RecordedRequest) -> MockResponse + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let requests = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let responder: Arc<Responder> = Arc::new(responder);

        let handle = {
            let requests = Arc::clone(&requests);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let requests = Arc::clone(&requests);
                    let responder = Arc::clone(&responder);
                    std::thread::spawn(move || {
                        if let Err(e) = serve(stream, &requests, responder.as_ref()) {
                            log::debug!("mock server connection error: {e}");
                        }
                    });
                }
            })
        };
        Ok(MockLlmServer {
            addr,
            requests,
            stop,
            handle: Some(handle),
        })
    }

    /// Answer with `script` in order; the last entry repeats once the script
    /// runs out.
    pub fn scripted(script: Vec<MockResponse>) -> std::io::Result<Self> {
        assert!(!script.is_empty(), "a scripted mock needs at least one response");
        let queue = Mutex::new(VecDeque::from(script));
        Self::start(move |_| {
            let mut q = queue.lock().unwrap();
            if q.len() > 1 {
                q.pop_front().unwrap()
            } else {
                q.front().cloned().unwrap()
            }
        })
    }

    /// Deterministic labels derived from the prompt's word list, for offline
    /// pipeline runs.
    pub fn deterministic_labeler() -> std::io::Result<Self> {
        Self::start(|req| MockResponse::label(&mock_label(req.user_text().unwrap_or(""))))
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

impl Drop for MockLlmServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop so it sees the flag.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

/// "Group: first, second" from the first two distinct words of the quoted
/// list in a prompt.
pub fn mock_label(user_text: &str) -> String {
    let words: Vec<String> = user_text
        .find('[')
        .zip(user_text.find(']'))
        .and_then(|(open, _)| {
            // The list is the JSON array starting at the first bracket.
            let mut de = serde_json::Deserializer::from_str(&user_text[open..]).into_iter::<Vec<String>>();
            de.next().and_then(|r| r.ok())
        })
        .unwrap_or_default();
    let mut distinct: Vec<&str> = Vec::new();
    for w in &words {
        if !distinct.contains(&w.as_str()) {
            distinct.push(w);
        }
        if distinct.len() == 2 {
            break;
        }
    }
    match distinct.as_slice() {
        [] => "NA".to_owned(),
        [one] => format!("Group: {one}"),
        [a, b, ..] => format!("Group: {a}, {b}"),
    }
}

fn serve(stream: TcpStream, requests: &Mutex<Vec<RecordedRequest>>, responder: &Responder) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_owned();
    let path = parts.next().unwrap_or_default().to_owned();
    if method.is_empty() {
        return Ok(());
    }

    let mut headers = Vec::new();
    let mut content_length = 0usize;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            break;
        }
        if let Some((k, v)) = trimmed.split_once(':') {
            let (k, v) = (k.trim().to_owned(), v.trim().to_owned());
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.parse().unwrap_or(0);
            }
            headers.push((k, v));
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let body = serde_json::from_slice(&body).unwrap_or(Value::Null);

    let request = RecordedRequest { method, path, headers, body };
    let response = responder(&request);
    requests.lock().unwrap().push(request);

    let reason = match response.status {
        200 => "OK",
        400 => "Bad Request",
        401 => "Unauthorized",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response.status,
        reason,
        response.body.len(),
        response.body
    )?;
    out.flush()
}
