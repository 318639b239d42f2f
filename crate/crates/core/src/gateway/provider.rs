//! Completion providers: live HTTP, scripted fixtures, and combinators.
//!
//! The scripted provider is a pure function of the request and the fixture
//! directory contents, which is what makes whole-engine replays exact.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::{CompletionRequest, GatewayError};

/// A completion backend. Implementations must be callable concurrently.
pub trait Provider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError>;
}

/// Hex digest (first 16 chars of SHA-256) over the request texts. This is
/// the fixture lookup key: sampling parameters deliberately do not
/// participate so tweaking temperature does not invalidate a fixture set.
pub fn request_digest(request: &CompletionRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(request.system_text.as_bytes());
    hasher.update([0u8]);
    hasher.update(request.user_text.as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(16);
    for byte in digest.iter().take(8) {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

/// Canonical fixture file name for a request: `<tag>__<digest>.json`, with
/// `__s<N>` inserted for sample ordinals above zero (the scripted analogue
/// of drawing several samples from one prompt).
pub fn fixture_file_name(request: &CompletionRequest) -> String {
    let digest = request_digest(request);
    if request.sample_ordinal == 0 {
        format!("{}__{}.json", request.tag, digest)
    } else {
        format!("{}__{}__s{}.json", request.tag, digest, request.sample_ordinal)
    }
}

/// Deterministic provider backed by a directory of response files.
///
/// Lookup tries the ordinal-specific name first and falls back to the base
/// `<tag>__<digest>.json`, so hand-authored sets need only one file per
/// prompt unless per-sample diversity matters.
pub struct ScriptedProvider {
    dir: PathBuf,
}

impl ScriptedProvider {
    pub fn new(dir: impl Into<PathBuf>) -> ScriptedProvider {
        ScriptedProvider { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn candidate_paths(&self, request: &CompletionRequest) -> Vec<PathBuf> {
        let digest = request_digest(request);
        let mut paths = Vec::with_capacity(2);
        if request.sample_ordinal > 0 {
            paths.push(self.dir.join(format!(
                "{}__{}__s{}.json",
                request.tag, digest, request.sample_ordinal
            )));
        }
        paths.push(self.dir.join(format!("{}__{}.json", request.tag, digest)));
        paths
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        for path in self.candidate_paths(request) {
            if path.is_file() {
                return fs::read_to_string(&path).map_err(|e| GatewayError::ProviderUnavailable {
                    detail: format!("fixture {} unreadable: {e}", path.display()),
                });
            }
        }
        Err(GatewayError::FixtureMissing {
            tag: request.tag.clone(),
            digest: request_digest(request),
        })
    }
}

/// Wraps any provider and tees every response into a fixture directory, so
/// a rule-driven or live run can be replayed later with [`ScriptedProvider`].
pub struct RecordingProvider<P> {
    inner: P,
    dir: PathBuf,
}

impl<P: Provider> RecordingProvider<P> {
    pub fn new(inner: P, dir: impl Into<PathBuf>) -> RecordingProvider<P> {
        RecordingProvider { inner, dir: dir.into() }
    }
}

impl<P: Provider> Provider for RecordingProvider<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let response = self.inner.complete(request)?;
        fs::create_dir_all(&self.dir).map_err(|e| GatewayError::ProviderUnavailable {
            detail: format!("cannot create fixture dir: {e}"),
        })?;
        let path = self.dir.join(fixture_file_name(request));
        // Concurrent streams can record the same fixture at once; a write
        // into a thread-unique temp file plus an atomic rename keeps the
        // final file intact either way.
        let tmp = self.dir.join(format!(
            "{}.{:?}.tmp",
            fixture_file_name(request),
            std::thread::current().id()
        ));
        fs::write(&tmp, &response)
            .and_then(|()| fs::rename(&tmp, &path))
            .map_err(|e| GatewayError::ProviderUnavailable {
                detail: format!("cannot record fixture {}: {e}", path.display()),
            })?;
        Ok(response)
    }
}

/// Provider backed by a plain function. Handy for tests and for wiring
/// custom deterministic responders.
pub struct FnProvider<F>(pub F);

impl<F> Provider for FnProvider<F>
where
    F: Fn(&CompletionRequest) -> Result<String, GatewayError> + Send + Sync,
{
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        (self.0)(request)
    }
}

/// HTTP chat-completion provider (OpenAI-compatible wire format).
///
/// The credential is read from the named environment variable at
/// construction time and sent as a bearer token. Transient transport
/// failures (connect errors, 429, 5xx) are retried twice with exponential
/// backoff before giving up.
pub struct LiveProvider {
    endpoint: String,
    model: String,
    api_key: String,
    client: reqwest::blocking::Client,
    backoff_base: Duration,
}

impl LiveProvider {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        credential_env: &str,
    ) -> Result<LiveProvider, GatewayError> {
        let api_key = std::env::var(credential_env).map_err(|_| GatewayError::ProviderUnavailable {
            detail: format!("credential environment variable {credential_env} is not set"),
        })?;
        Ok(LiveProvider {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .map_err(|e| GatewayError::ProviderUnavailable {
                    detail: format!("http client: {e}"),
                })?,
            backoff_base: Duration::from_millis(500),
        })
    }

    /// Shrinks the retry backoff; used by tests to keep failures fast.
    pub fn with_backoff_base(mut self, base: Duration) -> LiveProvider {
        self.backoff_base = base;
        self
    }

    fn attempt(&self, request: &CompletionRequest) -> Result<String, String> {
        let mut messages = Vec::with_capacity(2);
        if !request.system_text.is_empty() {
            messages.push(serde_json::json!({"role": "system", "content": request.system_text}));
        }
        messages.push(serde_json::json!({"role": "user", "content": request.user_text}));
        let body = serde_json::json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| format!("transport: {e}"))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(format!("retryable status {status}"));
        }
        let payload: serde_json::Value = response
            .error_for_status()
            .map_err(|e| format!("status: {e}"))?
            .json()
            .map_err(|e| format!("body: {e}"))?;
        extract_chat_content(&payload).ok_or_else(|| "no choices[0].message.content in response".to_string())
    }
}

/// Pulls the completion text out of a chat-completion response body.
pub fn extract_chat_content(payload: &serde_json::Value) -> Option<String> {
    payload
        .get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_string)
}

impl Provider for LiveProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        const ATTEMPTS: u32 = 3;
        let mut last_error = String::new();
        for attempt in 0..ATTEMPTS {
            if attempt > 0 {
                std::thread::sleep(self.backoff_base * 2u32.pow(attempt - 1));
            }
            match self.attempt(request) {
                Ok(text) => return Ok(text),
                Err(e) => last_error = e,
            }
        }
        Err(GatewayError::ProviderUnavailable {
            detail: format!("{} attempts failed; last error: {last_error}", ATTEMPTS),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    fn request(tag: &str, user: &str, ordinal: u32) -> CompletionRequest {
        CompletionRequest {
            system_text: String::new(),
            user_text: user.to_string(),
            temperature: 0.0,
            max_output_tokens: 256,
            tag: tag.to_string(),
            sample_ordinal: ordinal,
        }
    }

    #[test]
    fn scripted_lookup_returns_stored_text() {
        let dir = tempfile::tempdir().unwrap();
        let req = request("classifier", "classify this", 0);
        std::fs::write(dir.path().join(fixture_file_name(&req)), "{\"x\":1}").unwrap();
        let provider = ScriptedProvider::new(dir.path());
        assert_eq!(provider.complete(&req).unwrap(), "{\"x\":1}");
    }

    #[test]
    fn scripted_missing_fixture_is_typed_error() {
        let dir = tempfile::tempdir().unwrap();
        let provider = ScriptedProvider::new(dir.path());
        let req = request("selector", "pick one", 0);
        match provider.complete(&req).unwrap_err() {
            GatewayError::FixtureMissing { tag, digest } => {
                assert_eq!(tag, "selector");
                assert_eq!(digest, request_digest(&req));
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn scripted_responses_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let req = request("analyzer", "same prompt", 0);
        std::fs::write(dir.path().join(fixture_file_name(&req)), "resp").unwrap();
        let provider = ScriptedProvider::new(dir.path());
        let a = provider.complete(&req).unwrap();
        let b = provider.complete(&req).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ordinal_variant_wins_over_base_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let base = request("corrective_synthesis", "prompt", 0);
        let second = request("corrective_synthesis", "prompt", 1);
        std::fs::write(dir.path().join(fixture_file_name(&base)), "first").unwrap();
        std::fs::write(dir.path().join(fixture_file_name(&second)), "second").unwrap();
        let provider = ScriptedProvider::new(dir.path());
        assert_eq!(provider.complete(&base).unwrap(), "first");
        assert_eq!(provider.complete(&second).unwrap(), "second");
        // Ordinal 2 has no dedicated file and falls back to the base fixture.
        assert_eq!(provider.complete(&request("corrective_synthesis", "prompt", 2)).unwrap(), "first");
    }

    #[test]
    fn recording_provider_produces_replayable_fixtures() {
        let dir = tempfile::tempdir().unwrap();
        let recorder = RecordingProvider::new(
            FnProvider(|req: &CompletionRequest| Ok(format!("echo:{}", req.user_text))),
            dir.path(),
        );
        let req = request("consolidation", "merge these", 0);
        assert_eq!(recorder.complete(&req).unwrap(), "echo:merge these");
        let replay = ScriptedProvider::new(dir.path());
        assert_eq!(replay.complete(&req).unwrap(), "echo:merge these");
    }

    #[test]
    fn digest_ignores_sampling_parameters() {
        let mut a = request("selector", "same", 0);
        let mut b = request("selector", "same", 0);
        a.temperature = 0.0;
        b.temperature = 0.9;
        b.max_output_tokens = 9999;
        assert_eq!(request_digest(&a), request_digest(&b));
    }

    #[test]
    fn live_unreachable_endpoint_fails_after_attempts() {
        std::env::set_var("EVOPROMPT_TEST_KEY_A", "sk-test");
        // Port 9 on localhost: nothing listens there.
        let provider = LiveProvider::new("http://127.0.0.1:9/v1/chat/completions", "test-model", "EVOPROMPT_TEST_KEY_A")
            .unwrap()
            .with_backoff_base(Duration::from_millis(1));
        let err = provider.complete(&request("selector", "x", 0)).unwrap_err();
        match err {
            GatewayError::ProviderUnavailable { detail } => assert!(detail.contains("3 attempts")),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn live_missing_credential_is_reported() {
        match LiveProvider::new("http://localhost/x", "m", "EVOPROMPT_TEST_KEY_UNSET") {
            Err(GatewayError::ProviderUnavailable { detail }) => {
                assert!(detail.contains("EVOPROMPT_TEST_KEY_UNSET"));
            }
            Err(other) => panic!("unexpected error: {other:?}"),
            Ok(_) => panic!("expected missing-credential error"),
        }
    }

    /// One-shot HTTP server that answers a single request with a canned
    /// chat-completion body, optionally failing first with a 500.
    fn serve_once(responses: Vec<(u16, String)>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = [0u8; 8192];
                let _ = stream.read(&mut buf);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        format!("http://{addr}/v1/chat/completions")
    }

    #[test]
    fn live_happy_path_extracts_completion_text() {
        std::env::set_var("EVOPROMPT_TEST_KEY_B", "sk-test");
        let body = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": "{\"selected_index\":0}"}}]
        })
        .to_string();
        let endpoint = serve_once(vec![(200, body)]);
        let provider = LiveProvider::new(endpoint, "test-model", "EVOPROMPT_TEST_KEY_B")
            .unwrap()
            .with_backoff_base(Duration::from_millis(1));
        let text = provider.complete(&request("selector", "pick", 0)).unwrap();
        assert_eq!(text, "{\"selected_index\":0}");
    }

    #[test]
    fn live_retries_transient_server_errors() {
        std::env::set_var("EVOPROMPT_TEST_KEY_C", "sk-test");
        let good = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": "ok"}}]
        })
        .to_string();
        let endpoint = serve_once(vec![(500, "oops".to_string()), (200, good)]);
        let provider = LiveProvider::new(endpoint, "test-model", "EVOPROMPT_TEST_KEY_C")
            .unwrap()
            .with_backoff_base(Duration::from_millis(1));
        let text = provider.complete(&request("selector", "pick", 0)).unwrap();
        assert_eq!(text, "ok");
    }
}
