//! JSON-over-HTTP backend.
//!
//! Every request is a `POST {base_url}/v1/{endpoint}` whose body is the
//! request body object plus `"model"` and `"kind"` fields:
//!
//! | kind          | endpoint   | extra body fields                      | response             |
//! |---------------|------------|----------------------------------------|----------------------|
//! | `embed_text`  | `embed`    | `text`                                 | `{"embedding": [..]}`|
//! | `embed_image` | `embed`    | `image {id, uri, content_hash}`        | `{"embedding": [..]}`|
//! | `caption`     | `caption`  | `image`, `prompt`                      | `{"text": ".."}`     |
//! | `propose`     | `propose`  | `prompt`, `k`, `payload`               | `{"text": ".."}`     |
//! | `vqa`         | `vqa`      | `image`, `description`, `question`     | `{"answer": ".."}`   |
//! | `qa`          | `vqa`      | `caption`, `description`, `question`   | `{"answer": ".."}`   |
//!
//! The bearer token is read from [`TOKEN_ENV`] when present. Transport
//! failures are retried with exponential backoff (3 attempts in total);
//! HTTP error statuses are not retried.

use std::thread;
use std::time::Duration;

use serde_json::Value;

use super::{Backend, BackendRequest, GatewayError, RequestKind};
use crate::sha256_hex;

pub const TOKEN_ENV: &str = "ARCHILENS_API_TOKEN";

const MAX_ATTEMPTS: u32 = 3;

#[derive(Debug)]
pub struct HttpBackend {
    base_url: String,
    agent: ureq::Agent,
    token: Option<String>,
    backoff: Duration,
}

impl HttpBackend {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self, GatewayError> {
        let base_url = base_url.trim_end_matches('/').to_string();
        if !(base_url.starts_with("http://") || base_url.starts_with("https://")) {
            return Err(GatewayError::Config(format!("base URL must be http(s): {base_url}")));
        }
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        Ok(HttpBackend {
            base_url,
            agent: ureq::Agent::new_with_config(config),
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            backoff: Duration::from_millis(250),
        })
    }

    /// Initial retry delay; doubles after each failed attempt.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    fn endpoint(kind: RequestKind) -> &'static str {
        match kind {
            RequestKind::EmbedText | RequestKind::EmbedImage => "embed",
            RequestKind::Caption => "caption",
            RequestKind::Propose => "propose",
            RequestKind::Vqa | RequestKind::Qa => "vqa",
        }
    }

    fn post_once(&self, url: &str, body: &str) -> Result<Result<Value, GatewayError>, ureq::Error> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send(body)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string()?;
        Ok(match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| GatewayError::BackendRejected(format!("invalid JSON response: {e}"))),
            400..=499 => Err(GatewayError::BackendRejected(format!(
                "HTTP {status}: {}",
                snippet(&text)
            ))),
            _ => Err(GatewayError::BackendUnavailable(format!(
                "HTTP {status}: {}",
                snippet(&text)
            ))),
        })
    }
}

fn snippet(text: &str) -> String {
    text.chars().take(200).collect()
}

impl Backend for HttpBackend {
    fn backend_id(&self) -> String {
        format!("http-{}", &sha256_hex(&self.base_url)[..16])
    }

    fn call(&self, request: &BackendRequest) -> Result<Value, GatewayError> {
        let url = format!("{}/v1/{}", self.base_url, Self::endpoint(request.kind));
        let mut body = request.body.clone();
        if let Value::Object(map) = &mut body {
            map.insert("model".into(), Value::String(request.model_id.clone()));
            map.insert("kind".into(), Value::String(request.kind.as_str().into()));
        }
        let body = body.to_string();

        let mut delay = self.backoff;
        let mut last = String::new();
        for attempt in 1..=MAX_ATTEMPTS {
            match self.post_once(&url, &body) {
                Ok(result) => return result,
                Err(e) => {
                    log::warn!("{url}: attempt {attempt}/{MAX_ATTEMPTS} failed: {e}");
                    last = e.to_string();
                }
            }
            if attempt < MAX_ATTEMPTS {
                thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(GatewayError::BackendUnavailable(last))
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    use serde_json::json;

    use super::*;

    /// Serves `responses` in order, one connection each, and forwards each
    /// request's head and body.
    fn serve(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<(String, String)>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line.trim().is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    head.push_str(&line);
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                tx.send((head, String::from_utf8(buf).unwrap())).unwrap();
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}"), rx)
    }

    fn request(kind: RequestKind, body: Value) -> BackendRequest {
        BackendRequest {
            kind,
            model_id: "m".into(),
            key: body.clone(),
            body,
            payload_digest: [0; 32],
            payload_hash: "0".repeat(64),
        }
    }

    #[test]
    fn posts_json_with_model_and_token() {
        let (base, rx) = serve(vec![(200, r#"{"embedding":[1.0,2.0]}"#.into())]);
        let backend = HttpBackend::new(&base, Duration::from_secs(5))
            .unwrap()
            .with_token(Some("secret".into()));
        let got = backend
            .call(&request(RequestKind::EmbedText, json!({"text": "hi"})))
            .unwrap();
        assert_eq!(got, json!({"embedding": [1.0, 2.0]}));
        let (head, body) = rx.recv().unwrap();
        assert!(head.starts_with("POST /v1/embed "));
        assert!(head.contains("Bearer secret"));
        let body: Value = serde_json::from_str(&body).unwrap();
        assert_eq!(body, json!({"text": "hi", "model": "m", "kind": "embed_text"}));
    }

    #[test]
    fn qa_uses_vqa_endpoint() {
        let (base, rx) = serve(vec![(200, r#"{"answer":"Yes"}"#.into())]);
        let backend = HttpBackend::new(&base, Duration::from_secs(5)).unwrap();
        backend
            .call(&request(RequestKind::Qa, json!({"caption": "c"})))
            .unwrap();
        assert!(rx.recv().unwrap().0.starts_with("POST /v1/vqa "));
    }

    #[test]
    fn status_errors_are_classified() {
        let (base, _rx) = serve(vec![(400, "{}".into()), (503, "{}".into())]);
        let backend = HttpBackend::new(&base, Duration::from_secs(5)).unwrap();
        let req = request(RequestKind::Caption, json!({}));
        assert!(matches!(backend.call(&req), Err(GatewayError::BackendRejected(_))));
        assert!(matches!(backend.call(&req), Err(GatewayError::BackendUnavailable(_))));
    }

    #[test]
    fn transport_failure_retries_then_gives_up() {
        // Bind then drop to get a port with nothing listening.
        let addr = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
        let backend = HttpBackend::new(&format!("http://{addr}"), Duration::from_secs(2))
            .unwrap()
            .with_backoff(Duration::from_millis(1));
        let err = backend.call(&request(RequestKind::Propose, json!({}))).unwrap_err();
        assert!(matches!(err, GatewayError::BackendUnavailable(_)));
    }

    #[test]
    fn rejects_non_http_base() {
        assert!(HttpBackend::new("ftp://x", Duration::from_secs(1)).is_err());
    }
}
