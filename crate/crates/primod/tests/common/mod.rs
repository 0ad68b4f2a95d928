//! Local stub chat-completion endpoint for offline end-to-end tests.
//!
//! Speaks just enough HTTP/1.1 for the client: reads one POST, pulls the
//! flow id out of the prompt's `- ID: <id>` line, and answers with a JSON
//! body shaped like the real endpoint (`{"response": "<completion>"}`).

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

/// Maps a flow id to the completion text the stub should return.
pub type Responder = dyn Fn(&str) -> String + Send + Sync;

pub struct StubLlm {
    pub endpoint: String,
    /// Flow ids of every request received, in arrival order.
    pub requests: Arc<Mutex<Vec<String>>>,
    pub request_count: Arc<AtomicUsize>,
    shutdown: Arc<AtomicBool>,
    handle: Option<std::thread::JoinHandle<()>>,
}

/// A completion that parses cleanly for the given flow.
pub fn valid_completion(df_id: &str) -> String {
    serde_json::json!({
        "df_id": df_id,
        "identified_threats": [
            {
                "name": "Unencrypted Data Transfer",
                "justification": "The flow carries sensitive data without stated protection.",
                "linddun_category": "Disclosure of Information",
                "ai_lifecycle_stage": "Inference",
                "source": "LINDDUN"
            },
            {
                "name": "Model Inversion Attack",
                "justification": "Derived artifacts could be inverted to recover inputs.",
                "linddun_category": "Disclosure of Information",
                "ai_lifecycle_stage": "Inference",
                "source": "AI_PRIVACY_KB"
            }
        ]
    })
    .to_string()
}

impl StubLlm {
    pub fn start(responder: Box<Responder>) -> StubLlm {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub listener");
        let addr = listener.local_addr().unwrap();
        let requests = Arc::new(Mutex::new(Vec::new()));
        let request_count = Arc::new(AtomicUsize::new(0));
        let shutdown = Arc::new(AtomicBool::new(false));
        let responder: Arc<Responder> = Arc::from(responder);

        let req = requests.clone();
        let count = request_count.clone();
        let stop = shutdown.clone();
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let req = req.clone();
                let count = count.clone();
                let responder = responder.clone();
                std::thread::spawn(move || {
                    let _ = handle_connection(stream, &req, &count, responder.as_ref());
                });
            }
        });

        StubLlm {
            endpoint: format!("http://{addr}"),
            requests,
            request_count,
            shutdown,
            handle: Some(handle),
        }
    }

    pub fn requests_for(&self, df_id: &str) -> usize {
        self.requests
            .lock()
            .unwrap()
            .iter()
            .filter(|id| id.as_str() == df_id)
            .count()
    }
}

impl Drop for StubLlm {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Unblock the accept loop with one last connection.
        let _ = TcpStream::connect(self.endpoint.trim_start_matches("http://"));
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(
    stream: TcpStream,
    requests: &Mutex<Vec<String>>,
    count: &AtomicUsize,
    responder: &Responder,
) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?; // request line
    let mut content_length = 0usize;
    loop {
        let mut header = String::new();
        if reader.read_line(&mut header)? == 0 {
            return Ok(());
        }
        let header = header.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some(v) = header
            .to_ascii_lowercase()
            .strip_prefix("content-length:")
            .map(str::trim)
            .map(str::to_string)
        {
            content_length = v.parse().unwrap_or(0);
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;

    let df_id = extract_df_id(&body).unwrap_or_else(|| "?".to_string());
    requests.lock().unwrap().push(df_id.clone());
    count.fetch_add(1, Ordering::SeqCst);

    let completion = responder(&df_id);
    let payload = serde_json::json!({ "response": completion }).to_string();
    let response = format!(
        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        payload.len(),
        payload
    );
    let mut stream = stream;
    stream.write_all(response.as_bytes())?;
    stream.flush()
}

fn extract_df_id(body: &[u8]) -> Option<String> {
    let value: serde_json::Value = serde_json::from_slice(body).ok()?;
    let prompt = value.get("prompt")?.as_str()?;
    for line in prompt.lines() {
        if let Some(rest) = line.trim().strip_prefix("- ID: ") {
            return Some(rest.trim().to_string());
        }
    }
    None
}
