use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendError, ChatRequest, GatewayError};

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

/// OpenAI-style `POST {base_url}/chat/completions` backend.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| GatewayError::InvalidRequest(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpBackend { client, base_url: base_url.into().trim_end_matches('/').to_string(), api_key })
    }

    /// Reads `EDDA_BASE_URL` (default OpenAI) and `EDDA_API_KEY`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let base = std::env::var("EDDA_BASE_URL").unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        let key = std::env::var("EDDA_API_KEY").ok().filter(|k| !k.is_empty());
        if key.is_none() {
            log::warn!("EDDA_API_KEY is not set; sending unauthenticated requests to {base}");
        }
        Self::new(base, key)
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }
}

pub(crate) fn request_body(req: &ChatRequest) -> Value {
    json!({
        "model": req.model,
        "messages": req.messages.iter().map(|m| json!({"role": m.role.as_str(), "content": m.content})).collect::<Vec<_>>(),
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    })
}

pub(crate) fn extract_content(body: &str) -> Result<String, BackendError> {
    let v: Value = serde_json::from_str(body).map_err(|_| BackendError::MissingContent(body.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::MissingContent(body.to_string()))
}

impl Backend for HttpBackend {
    fn send(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let mut builder = self.client.post(self.endpoint()).json(&request_body(req));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| BackendError::Transient(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status { status: status.as_u16(), body });
        }
        extract_content(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves one canned HTTP response per scripted entry and returns the raw
    /// requests it received.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    head.push_str(&line);
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen.push(format!("{head}{}", String::from_utf8(buf).unwrap()));
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            seen
        });
        (format!("http://{addr}/v1"), handle)
    }

    #[test]
    fn wire_protocol_round_trip() {
        let (base, handle) = serve(vec![(200, r#"{"choices":[{"message":{"role":"assistant","content":" Favor. "}}]}"#.into())]);
        let backend = HttpBackend::new(base, Some("sk-test".into())).unwrap();
        let req = ChatRequest::user("gpt-3.5-turbo", "label this", 0.0);
        assert_eq!(backend.send(&req).unwrap(), " Favor. ");
        let seen = handle.join().unwrap();
        let raw = &seen[0];
        assert!(raw.starts_with("POST /v1/chat/completions "), "{raw}");
        assert!(raw.to_ascii_lowercase().contains("authorization: bearer sk-test"));
        let body: Value = serde_json::from_str(raw.split("\r\n\r\n").nth(1).unwrap()).unwrap();
        assert_eq!(body["model"], "gpt-3.5-turbo");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "label this");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 512);
    }

    #[test]
    fn error_status_and_missing_content() {
        let (base, handle) = serve(vec![(400, r#"{"error":"bad model"}"#.into()), (200, r#"{"choices":[]}"#.into())]);
        let backend = HttpBackend::new(base, None).unwrap();
        let req = ChatRequest::user("m", "x", 0.0);
        match backend.send(&req) {
            Err(BackendError::Status { status: 400, body }) => assert!(body.contains("bad model")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(backend.send(&req), Err(BackendError::MissingContent(_))));
        handle.join().unwrap();
    }

    #[test]
    fn server_errors_are_retried_through_gateway() {
        use super::super::{Gateway, GatewayConfig};
        use std::sync::Arc;
        let ok = r#"{"choices":[{"message":{"content":"done"}}]}"#.to_string();
        let (base, handle) = serve(vec![(503, "busy".into()), (200, ok)]);
        let gw = Gateway::new(
            Arc::new(HttpBackend::new(base, None).unwrap()),
            GatewayConfig { base_backoff: Duration::ZERO, ..GatewayConfig::default() },
        );
        assert_eq!(gw.complete(&ChatRequest::user("m", "x", 0.0)).unwrap().text, "done");
        assert_eq!(gw.stats().attempts, 2);
        handle.join().unwrap();
    }
}
