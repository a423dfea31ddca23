//! Chat-completion clients: an OpenAI-style HTTP client, a retry wrapper, and
//! deterministic mock clients for tests and offline runs.

use std::collections::HashMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::jsonl;

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub latency_ms: u64,
}

impl Completion {
    pub fn instant(text: impl Into<String>) -> Self {
        Completion {
            text: text.into(),
            latency_ms: 0,
        }
    }
}

/// Anything that turns a prompt into text.
pub trait ChatClient: Send + Sync {
    fn send(&self, prompt: &str, model: &str, temperature: f64) -> Result<Completion>;
}

impl<F> ChatClient for F
where
    F: Fn(&str, &str, f64) -> Result<String> + Send + Sync,
{
    fn send(&self, prompt: &str, model: &str, temperature: f64) -> Result<Completion> {
        self(prompt, model, temperature).map(Completion::instant)
    }
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// One provider endpoint and model. Temperature is chosen per request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderProfile {
    pub name: String,
    #[serde(default = "default_provider")]
    pub provider: String,
    pub model: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_provider() -> String {
    "openai-compatible".into()
}
fn default_retries() -> u32 {
    3
}
fn default_timeout() -> u64 {
    60
}
fn default_in_flight() -> usize {
    4
}

impl ProviderProfile {
    pub fn mock(name: &str) -> Self {
        ProviderProfile {
            name: name.into(),
            provider: "mock".into(),
            model: name.into(),
            endpoint: None,
            api_key_env: None,
            max_retries: 0,
            timeout_secs: 1,
            max_in_flight: 4,
        }
    }

    pub fn load_all(path: &Path) -> Result<Vec<ProviderProfile>> {
        let profiles: Vec<ProviderProfile> = jsonl::read_json(path)?;
        if profiles.is_empty() {
            return Err(Error::Config(format!("{}: no provider profiles", path.display())));
        }
        let mut names = std::collections::HashSet::new();
        for p in &profiles {
            if !names.insert(&p.name) {
                return Err(Error::Config(format!("duplicate profile name {:?}", p.name)));
            }
        }
        Ok(profiles)
    }

    /// Builds the live HTTP client for this profile, wrapped in retries.
    pub fn http_client(&self, trace: bool) -> Result<RetryingClient<HttpChatClient>> {
        let endpoint = self
            .endpoint
            .clone()
            .ok_or_else(|| Error::Config(format!("profile {:?} has no endpoint", self.name)))?;
        let api_key = match &self.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| Error::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        Ok(RetryingClient::new(
            HttpChatClient::new(endpoint, api_key, Duration::from_secs(self.timeout_secs), trace),
            self.max_retries,
            Duration::from_millis(500),
        ))
    }
}

/// POSTs `{model, messages, temperature}` and reads
/// `choices[0].message.content`.
pub struct HttpChatClient {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    trace: bool,
}

impl HttpChatClient {
    pub fn new(endpoint: String, api_key: Option<String>, timeout: Duration, trace: bool) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpChatClient {
            endpoint,
            api_key,
            agent,
            trace,
        }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

impl ChatClient for HttpChatClient {
    fn send(&self, prompt: &str, model: &str, temperature: f64) -> Result<Completion> {
        let body = serde_json::to_string(&ChatBody {
            model,
            messages: vec![ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature,
        })?;
        if self.trace {
            // The credential travels in a header and never appears in the body.
            log::info!("POST {} authorization=[redacted] body={body}", self.endpoint);
        }
        let start = Instant::now();
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body.as_str()).map_err(|e| Error::Transport {
            message: e.to_string(),
            retryable: true,
        })?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| Error::Transport {
            message: e.to_string(),
            retryable: true,
        })?;
        let latency_ms = start.elapsed().as_millis() as u64;
        if self.trace {
            log::info!("response status={status} body={text}");
        }
        if !(200..300).contains(&status) {
            return Err(Error::Transport {
                message: format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()),
                retryable: status == 429 || status >= 500,
            });
        }
        let json: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Transport {
            message: format!("unparseable provider response: {e}"),
            retryable: false,
        })?;
        let content = json["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| Error::Transport {
                message: "provider response has no choices[0].message.content".into(),
                retryable: false,
            })?;
        Ok(Completion {
            text: content.to_string(),
            latency_ms,
        })
    }
}

/// Retries retryable transport errors with exponential backoff.
pub struct RetryingClient<C> {
    inner: C,
    max_retries: u32,
    base_delay: Duration,
}

impl<C> RetryingClient<C> {
    pub fn new(inner: C, max_retries: u32, base_delay: Duration) -> Self {
        RetryingClient {
            inner,
            max_retries,
            base_delay,
        }
    }
}

impl<C: ChatClient> ChatClient for RetryingClient<C> {
    fn send(&self, prompt: &str, model: &str, temperature: f64) -> Result<Completion> {
        let mut attempt = 0;
        loop {
            match self.inner.send(prompt, model, temperature) {
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    let delay = self.base_delay * 2u32.pow(attempt);
                    log::warn!("attempt {} failed ({e}); retrying in {delay:?}", attempt + 1);
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Extracts the allowed letters from a rendered question prompt.
pub fn allowed_letters_in_prompt(prompt: &str) -> Vec<String> {
    const MARKER: &str = "uppercase letter from this set: ";
    prompt
        .find(MARKER)
        .map(|i| {
            let rest = &prompt[i + MARKER.len()..];
            let line = rest.lines().next().unwrap_or("").trim_end_matches('.');
            line.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
        })
        .unwrap_or_default()
}

/// Answers with the keyed letter of the question found in the prompt.
pub struct OracleClient {
    keys: HashMap<String, String>,
}

impl OracleClient {
    /// `questions` pairs each rendered question block with its key.
    pub fn new<I>(questions: I) -> Self
    where
        I: IntoIterator<Item = (String, String)>,
    {
        OracleClient {
            keys: questions.into_iter().collect(),
        }
    }
}

impl ChatClient for OracleClient {
    fn send(&self, prompt: &str, _model: &str, _temperature: f64) -> Result<Completion> {
        let block = crate::rag::question_block_of(prompt);
        self.keys
            .get(block)
            .map(|k| Completion::instant(k.clone()))
            .ok_or_else(|| Error::Transport {
                message: "oracle has no key for this question".into(),
                retryable: false,
            })
    }
}

/// Uniform choice over the prompt's allowed letters. Each answer is a pure
/// function of (seed, model, temperature, prompt), so call order does not
/// matter.
pub struct RandomClient {
    seed: u64,
}

impl RandomClient {
    pub fn new(seed: u64) -> Self {
        RandomClient { seed }
    }
}

impl ChatClient for RandomClient {
    fn send(&self, prompt: &str, model: &str, temperature: f64) -> Result<Completion> {
        let letters = allowed_letters_in_prompt(prompt);
        if letters.is_empty() {
            return Ok(Completion::instant(""));
        }
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(model.as_bytes());
        h.update(temperature.to_bits().to_le_bytes());
        h.update(prompt.as_bytes());
        let digest: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        Ok(Completion::instant(letters[rng.gen_range(0..letters.len())].clone()))
    }
}

#[derive(Deserialize)]
struct ScriptEntry {
    #[serde(default)]
    prompt: Option<String>,
    #[serde(default)]
    prompt_sha256: Option<String>,
    response: String,
}

/// Replays fixed responses keyed by the SHA-256 of the prompt.
#[derive(Debug, Clone, Default)]
pub struct ScriptedClient {
    responses: HashMap<String, String>,
}

impl ScriptedClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, prompt: &str, response: impl Into<String>) -> Self {
        self.responses.insert(prompt_hash(prompt), response.into());
        self
    }

    /// JSONL transcript; each line has `response` and either `prompt` or
    /// `prompt_sha256`.
    pub fn load(path: &Path) -> Result<Self> {
        let entries: Vec<ScriptEntry> = jsonl::read(path)?;
        let mut responses = HashMap::new();
        for (i, e) in entries.into_iter().enumerate() {
            let key = match (e.prompt, e.prompt_sha256) {
                (_, Some(h)) => h.to_lowercase(),
                (Some(p), None) => prompt_hash(&p),
                (None, None) => {
                    return Err(Error::parse(path.display().to_string(), i + 1, "entry needs prompt or prompt_sha256"))
                }
            };
            responses.insert(key, e.response);
        }
        Ok(ScriptedClient { responses })
    }
}

impl ChatClient for ScriptedClient {
    fn send(&self, prompt: &str, _model: &str, _temperature: f64) -> Result<Completion> {
        let h = prompt_hash(prompt);
        self.responses
            .get(&h)
            .map(|r| Completion::instant(r.clone()))
            .ok_or_else(|| Error::Transport {
                message: format!("no scripted response for prompt {h}"),
                retryable: false,
            })
    }
}

/// Mock provider selector: `mock:oracle`, `mock:random:<seed>`,
/// `mock:script:<file>`.
#[derive(Debug, Clone, PartialEq)]
pub enum MockProvider {
    Oracle,
    Random(u64),
    Script(std::path::PathBuf),
}

impl std::str::FromStr for MockProvider {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let rest = s
            .strip_prefix("mock:")
            .ok_or_else(|| Error::Config(format!("unknown provider {s:?}; expected mock:oracle|mock:random:<seed>|mock:script:<file>")))?;
        if rest == "oracle" {
            Ok(MockProvider::Oracle)
        } else if let Some(seed) = rest.strip_prefix("random:") {
            seed.parse()
                .map(MockProvider::Random)
                .map_err(|_| Error::Config(format!("invalid random mock seed {seed:?}")))
        } else if let Some(file) = rest.strip_prefix("script:") {
            Ok(MockProvider::Script(file.into()))
        } else {
            Err(Error::Config(format!("unknown mock provider {s:?}")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    #[test]
    fn retries_then_succeeds() {
        let calls = AtomicU32::new(0);
        let flaky = |_: &str, _: &str, _: f64| -> Result<String> {
            if calls.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(Error::Transport { message: "503".into(), retryable: true })
            } else {
                Ok("ok".into())
            }
        };
        let client = RetryingClient::new(&flaky, 3, Duration::ZERO);
        assert_eq!(client.send("p", "m", 0.0).unwrap().text, "ok");
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn retries_are_bounded() {
        let calls = AtomicU32::new(0);
        let down = |_: &str, _: &str, _: f64| -> Result<String> {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(Error::Transport { message: "down".into(), retryable: true })
        };
        let client = RetryingClient::new(&down, 2, Duration::ZERO);
        assert!(client.send("p", "m", 0.0).is_err());
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn non_retryable_fails_fast() {
        let calls = AtomicU32::new(0);
        let bad = |_: &str, _: &str, _: f64| -> Result<String> {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(Error::Transport { message: "400".into(), retryable: false })
        };
        assert!(RetryingClient::new(&bad, 5, Duration::ZERO).send("p", "m", 0.0).is_err());
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn mock_provider_parsing() {
        assert_eq!("mock:oracle".parse::<MockProvider>().unwrap(), MockProvider::Oracle);
        assert_eq!("mock:random:42".parse::<MockProvider>().unwrap(), MockProvider::Random(42));
        assert_eq!(
            "mock:script:t.jsonl".parse::<MockProvider>().unwrap(),
            MockProvider::Script("t.jsonl".into())
        );
        assert!("openai".parse::<MockProvider>().is_err());
        assert!("mock:random:x".parse::<MockProvider>().is_err());
    }

    #[test]
    fn random_client_is_order_independent() {
        let c = RandomClient::new(9);
        let p = "Return ONLY one uppercase letter from this set: A, B, C, D, E.\nQ";
        assert_eq!(allowed_letters_in_prompt(p), ["A", "B", "C", "D", "E"]);
        let a = c.send(p, "m", 0.2).unwrap();
        let _ = c.send("other", "m", 0.2);
        assert_eq!(c.send(p, "m", 0.2).unwrap(), a);
    }

    #[test]
    fn scripted_client_keys_by_hash() {
        let c = ScriptedClient::new().with("hello", "world");
        assert_eq!(c.send("hello", "m", 0.0).unwrap().text, "world");
        let err = c.send("bye", "m", 0.0).unwrap_err();
        assert!(!err.is_retryable());
    }
}
