use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Judge, JudgeCache, JudgeError, JudgeScores};

/// The judge prompt, verbatim. Placeholders: `[reasoning]`, `[class_X]`, `[extension]`.
pub const JUDGE_PROMPT: &str = include_str!("../../prompts/judge_v1.txt");
pub const JUDGE_PROMPT_VERSION: &str = "judge-v1";

/// Fills the judge prompt in a single pass, so placeholder-like text inside
/// the inputs is never substituted again.
pub fn render_judge_prompt(reasoning: &str, predicted: &str, extension: &str) -> String {
    const SLOTS: [&str; 3] = ["[reasoning]", "[class_X]", "[extension]"];
    let mut out = String::with_capacity(JUDGE_PROMPT.len() + reasoning.len() + extension.len());
    let mut rest = JUDGE_PROMPT;
    while let Some((pos, slot)) = SLOTS
        .iter()
        .enumerate()
        .filter_map(|(i, s)| rest.find(s).map(|p| (p, i)))
        .min()
    {
        out.push_str(&rest[..pos]);
        out.push_str(match slot {
            0 => reasoning,
            1 => predicted,
            _ => extension,
        });
        rest = &rest[pos + SLOTS[slot].len()..];
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("no score found in reply {raw:?}")]
    NoScore { raw: String },
    #[error("score {value} outside [0, 1] in reply {raw:?}")]
    OutOfRange { value: f64, raw: String },
}

fn decimal_literal(s: &str) -> Option<f64> {
    let body = s.strip_prefix('+').unwrap_or(s);
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    let digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    let ok = digits(int)
        && frac.is_none_or(digits)
        && (!int.is_empty() || frac.is_some_and(|f| !f.is_empty()));
    if ok {
        body.parse().ok()
    } else {
        None
    }
}

/// Reads a score in `[0, 1]` from a judge reply.
///
/// The strict tier accepts a reply that is exactly one decimal literal. The
/// lenient tier accepts a reply whose final word is a decimal literal
/// (optionally followed by one period), e.g. `"The average score is 0.5"`.
/// Out-of-range values are errors, never clamped.
pub fn parse_judge_reply(text: &str) -> Result<f64, ParseError> {
    let trimmed = text.trim();
    let value = decimal_literal(trimmed).or_else(|| {
        let tail = trimmed.strip_suffix('.').unwrap_or(trimmed);
        let last = tail
            .rsplit(|c: char| c.is_whitespace() || c == ':' || c == '=')
            .next()?;
        decimal_literal(last)
    });
    match value {
        None => Err(ParseError::NoScore {
            raw: text.to_string(),
        }),
        Some(v) if !(0.0..=1.0).contains(&v) => Err(ParseError::OutOfRange {
            value: v,
            raw: text.to_string(),
        }),
        Some(v) => Ok(v),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Surface the failure to the caller.
    #[default]
    Error,
    /// Score the extension 0 on every dimension.
    ZeroScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model_name: String,
    pub temperature: f64,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub cache_path: Option<PathBuf>,
    pub fallback: Fallback,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub max_in_flight: usize,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".to_string(),
            model_name: "gpt-4o".to_string(),
            temperature: 0.0,
            timeout_secs: 30.0,
            max_retries: 2,
            cache_path: None,
            fallback: Fallback::Error,
            api_key_env: "JUDGE_API_KEY".to_string(),
            max_in_flight: 4,
        }
    }
}

impl JudgeConfig {
    pub fn validate(&self) -> Result<(), JudgeError> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(JudgeError::Config("timeout must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(JudgeError::Config(
                "max_in_flight must be at least 1".into(),
            ));
        }
        if !(self.temperature >= 0.0) {
            return Err(JudgeError::Config("temperature must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("http status {0}")]
    Status(u16),
    #[error("{0}")]
    Other(String),
}

/// Sends one chat request and returns `choices[0].message.content`.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

/// Blocking HTTP transport for OpenAI-compatible endpoints.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpTransport {
    /// Reads the API key from `config.api_key_env`; a missing key sends no
    /// authorization header.
    pub fn new(config: &JudgeConfig) -> Result<Self, JudgeError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| JudgeError::Config(e.to_string()))?;
        Ok(HttpTransport {
            client,
            endpoint: config.endpoint.clone(),
            api_key: std::env::var(&config.api_key_env).ok(),
        })
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let mut req = self.client.post(&self.endpoint).json(request);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Other(e.to_string())
            }
        })?;
        if !resp.status().is_success() {
            return Err(TransportError::Status(resp.status().as_u16()));
        }
        let body: ChatResponse = resp
            .json()
            .map_err(|e| TransportError::Other(format!("bad response body: {e}")))?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| TransportError::Other("response has no choices".into()))
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Gate {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut free = self.free.lock().expect("gate lock");
            while *free == 0 {
                free = self.cv.wait(free).expect("gate lock");
            }
            *free -= 1;
        }
        let out = f();
        *self.free.lock().expect("gate lock") += 1;
        self.cv.notify_one();
        out
    }
}

/// Chat-model judge. The remote model returns only the averaged score, which
/// is copied into all four dimensions.
pub struct RemoteJudge<T: ChatTransport> {
    config: JudgeConfig,
    transport: T,
    cache: JudgeCache,
    gate: Gate,
}

impl RemoteJudge<HttpTransport> {
    pub fn http(config: JudgeConfig) -> Result<Self, JudgeError> {
        let transport = HttpTransport::new(&config)?;
        RemoteJudge::new(config, transport)
    }
}

impl<T: ChatTransport> RemoteJudge<T> {
    /// Opens the cache file named in the config, if any.
    pub fn new(config: JudgeConfig, transport: T) -> Result<Self, JudgeError> {
        config.validate()?;
        let cache = match &config.cache_path {
            Some(p) => JudgeCache::open(p)?,
            None => JudgeCache::in_memory(),
        };
        Ok(RemoteJudge {
            gate: Gate::new(config.max_in_flight),
            config,
            transport,
            cache,
        })
    }

    pub fn cache(&self) -> &JudgeCache {
        &self.cache
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    fn request(&self, prompt: String) -> ChatRequest {
        ChatRequest {
            model: self.config.model_name.clone(),
            messages: vec![ChatMessage {
                role: "user".to_string(),
                content: prompt,
            }],
            temperature: self.config.temperature,
        }
    }

    /// Cache key: hash of the prompt version, model, temperature, gold label and rendered prompt.
    pub fn cache_key(&self, prompt: &str, gold: &str) -> String {
        let mut h = Sha256::new();
        for part in [
            JUDGE_PROMPT_VERSION,
            &hex::encode(Sha256::digest(JUDGE_PROMPT.as_bytes())),
            &self.config.model_name,
            &format!("{:?}", self.config.temperature),
            gold,
            prompt,
        ] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex::encode(h.finalize())
    }

    fn score_remote(&self, prompt: String, gold: &str) -> Result<f64, JudgeError> {
        let key = self.cache_key(&prompt, gold);
        if let Some(score) = self.cache.get(&key) {
            return Ok(score);
        }
        let request = self.request(prompt);
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for _ in 0..attempts {
            if let Some(score) = self.cache.get(&key) {
                return Ok(score);
            }
            let outcome = self
                .gate
                .run(|| self.transport.complete(&request))
                .map_err(JudgeError::from)
                .and_then(|reply| parse_judge_reply(&reply).map_err(JudgeError::from));
            match outcome {
                Ok(score) => {
                    self.cache.insert(&key, score)?;
                    return Ok(score);
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(JudgeError::Exhausted { attempts, last })
    }
}

impl<T: ChatTransport> Judge for RemoteJudge<T> {
    fn score(
        &self,
        extension: &str,
        gold: &str,
        reasoning: &str,
        predicted: &str,
    ) -> Result<JudgeScores, JudgeError> {
        let prompt = render_judge_prompt(reasoning, predicted, extension);
        match self.score_remote(prompt, gold) {
            Ok(score) => Ok(JudgeScores::uniform(score)),
            Err(_) if self.config.fallback == Fallback::ZeroScore => Ok(JudgeScores::default()),
            Err(e) => Err(e),
        }
    }

    fn version(&self) -> String {
        format!("{JUDGE_PROMPT_VERSION}-{}", self.config.model_name)
    }
}

/// One-shot remote scoring over HTTP with the configured cache.
pub fn remote_score(
    extension: &str,
    gold: &str,
    reasoning: &str,
    predicted: &str,
    config: &JudgeConfig,
) -> Result<JudgeScores, JudgeError> {
    RemoteJudge::http(config.clone())?.score(extension, gold, reasoning, predicted)
}
