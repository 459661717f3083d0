//! Remote reasoner client: the de-facto chat-completion HTTP shape with
//! retries on transient failure. No local inference.

use std::time::Duration;

use serde_json::{json, Value};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ReasonerEndpoint {
    pub url: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_retries() -> u32 {
    2
}

fn default_timeout_secs() -> u64 {
    120
}

#[derive(Debug, thiserror::Error)]
pub enum ReasonerError {
    #[error("remote failure after {attempts} attempts: {last_error}")]
    RemoteFailure { attempts: u32, last_error: String },
    #[error("reasoner protocol violation: {0}")]
    ProtocolViolation(String),
}

/// POST the prompt as a single user message and return the completion text
/// verbatim. Transport failures and 5xx responses are retried up to
/// `max_retries` times; an empty completion is a protocol violation.
pub fn query_reasoner(prompt: &str, endpoint: &ReasonerEndpoint) -> Result<String, ReasonerError> {
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(endpoint.timeout_secs))
        .build()
        .map_err(|e| ReasonerError::RemoteFailure {
            attempts: 0,
            last_error: e.to_string(),
        })?;
    let body = json!({
        "model": endpoint.model,
        "messages": [{"role": "user", "content": prompt}],
    });
    let attempts = endpoint.max_retries + 1;
    let mut last_error = String::new();
    for _ in 0..attempts {
        let mut request = client.post(&endpoint.url).json(&body);
        if let Some(key) = &endpoint.api_key {
            request = request.bearer_auth(key);
        }
        match request.send() {
            Ok(response) => {
                let status = response.status();
                if status.is_server_error() {
                    last_error = format!("HTTP {status}");
                    continue;
                }
                if !status.is_success() {
                    return Err(ReasonerError::RemoteFailure {
                        attempts: 1,
                        last_error: format!("HTTP {status}"),
                    });
                }
                let value: Value = response.json().map_err(|e| {
                    ReasonerError::ProtocolViolation(format!("bad response body: {e}"))
                })?;
                let content = value["choices"][0]["message"]["content"]
                    .as_str()
                    .unwrap_or("");
                if content.is_empty() {
                    return Err(ReasonerError::ProtocolViolation(
                        "empty completion".into(),
                    ));
                }
                return Ok(content.to_string());
            }
            Err(e) => last_error = e.to_string(),
        }
    }
    Err(ReasonerError::RemoteFailure {
        attempts,
        last_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// One-shot HTTP stub: answers `responses.len()` requests, each with the
    /// given status and JSON body, then exits.
    fn stub_http(responses: Vec<(u16, String)>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = [0u8; 65536];
                let _ = stream.read(&mut buf);
                let reason = if status == 200 { "OK" } else { "Error" };
                let response = format!(
                    "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(response.as_bytes());
            }
        });
        format!("http://{addr}/v1/chat/completions")
    }

    fn endpoint(url: String) -> ReasonerEndpoint {
        ReasonerEndpoint {
            url,
            model: "test-model".to_string(),
            api_key: None,
            max_retries: 2,
            timeout_secs: 5,
        }
    }

    fn completion(text: &str) -> String {
        json!({"choices": [{"message": {"content": text}}]}).to_string()
    }

    #[test]
    fn passthrough_returns_canned_transcript_unmodified() {
        let canned = "<think>steps</think> \\boxed{\"Pneumonia\": 0.7}";
        let url = stub_http(vec![(200, completion(canned))]);
        let out = query_reasoner("prompt", &endpoint(url)).unwrap();
        assert_eq!(out, canned);
    }

    #[test]
    fn retries_through_two_500s() {
        let url = stub_http(vec![
            (500, "{}".to_string()),
            (500, "{}".to_string()),
            (200, completion("ok")),
        ]);
        let out = query_reasoner("prompt", &endpoint(url)).unwrap();
        assert_eq!(out, "ok");
    }

    #[test]
    fn empty_completion_is_a_protocol_violation() {
        let url = stub_http(vec![(200, completion(""))]);
        assert!(matches!(
            query_reasoner("prompt", &endpoint(url)),
            Err(ReasonerError::ProtocolViolation(_))
        ));
    }

    #[test]
    fn persistent_failure_is_a_remote_error() {
        let url = stub_http(vec![
            (500, "{}".to_string()),
            (500, "{}".to_string()),
            (500, "{}".to_string()),
        ]);
        match query_reasoner("prompt", &endpoint(url)) {
            Err(ReasonerError::RemoteFailure { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("unexpected: {other:?}"),
        }
    }
}
