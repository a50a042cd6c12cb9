//! Prompt templates and a retrying, rate-limited client for a
//! chat-completion style text-generation service.
//!
//! The HTTP binding lives outside this crate; anything implementing
//! [`Transport`] can drive a [`GenClient`].

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::corpus::word_count;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: &'static str,
    pub text: &'static str,
}

pub const CONTINUE: PromptTemplate = PromptTemplate {
    id: "continue",
    text: include_str!("../assets/prompts/continue.txt"),
};

pub const CLEAN_CONTINUATION: PromptTemplate = PromptTemplate {
    id: "clean_continuation",
    text: include_str!("../assets/prompts/clean_continuation.txt"),
};

pub const KEYWORDS: PromptTemplate = PromptTemplate {
    id: "keywords",
    text: include_str!("../assets/prompts/keywords.txt"),
};

pub const VARIANT: PromptTemplate = PromptTemplate {
    id: "variant",
    text: include_str!("../assets/prompts/variant.txt"),
};

pub const CLEAN_VARIANT: PromptTemplate = PromptTemplate {
    id: "clean_variant",
    text: include_str!("../assets/prompts/clean_variant.txt"),
};

pub const TEMPLATES: [PromptTemplate; 5] = [CONTINUE, CLEAN_CONTINUATION, KEYWORDS, VARIANT, CLEAN_VARIANT];

enum Piece<'a> {
    Literal(&'a str),
    Slot(&'a str),
}

fn pieces(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let name_len = after
            .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
            .unwrap_or(after.len());
        if name_len > 0 && after[name_len..].starts_with('}') {
            out.push(Piece::Literal(&rest[..open]));
            out.push(Piece::Slot(&after[..name_len]));
            rest = &after[name_len + 1..];
        } else {
            out.push(Piece::Literal(&rest[..=open]));
            rest = after;
        }
    }
    out.push(Piece::Literal(rest));
    out
}

impl PromptTemplate {
    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut names: Vec<&str> = pieces(self.text)
            .into_iter()
            .filter_map(|p| match p {
                Piece::Slot(n) => Some(n),
                Piece::Literal(_) => None,
            })
            .collect();
        names.dedup();
        names
    }

    /// Single-pass substitution: braces inside values are never expanded.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String> {
        for (name, _) in vars {
            if !self.placeholders().contains(name) {
                return Err(Error::validation(format!(
                    "template {} has no placeholder {{{name}}}",
                    self.id
                )));
            }
        }
        let mut out = String::with_capacity(self.text.len() + vars.iter().map(|(_, v)| v.len()).sum::<usize>());
        for piece in pieces(self.text) {
            match piece {
                Piece::Literal(s) => out.push_str(s),
                Piece::Slot(name) => {
                    let (_, value) = vars.iter().find(|(n, _)| *n == name).ok_or_else(|| {
                        Error::validation(format!("template {} placeholder {{{name}}} is unfilled", self.id))
                    })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndpointProfile {
    BaseModel,
    InstructModel,
    Cleaner,
}

impl fmt::Display for EndpointProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EndpointProfile::BaseModel => "base-model",
            EndpointProfile::InstructModel => "instruct-model",
            EndpointProfile::Cleaner => "cleaner",
        })
    }
}

impl std::str::FromStr for EndpointProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base-model" => Ok(EndpointProfile::BaseModel),
            "instruct-model" => Ok(EndpointProfile::InstructModel),
            "cleaner" => Ok(EndpointProfile::Cleaner),
            _ => Err(Error::Config(format!(
                "unknown endpoint profile {s:?} (base-model, instruct-model, cleaner)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub profile: EndpointProfile,
    pub prompt: String,
    pub max_words: Option<usize>,
    /// Decoding parameters passed through untouched (temperature, top_p, seed).
    pub params: BTreeMap<String, serde_json::Value>,
}

impl GenerationRequest {
    pub fn new(profile: EndpointProfile, prompt: String) -> Result<Self> {
        if prompt.trim().is_empty() {
            return Err(Error::validation("prompt is empty"));
        }
        Ok(GenerationRequest {
            profile,
            prompt,
            max_words: None,
            params: BTreeMap::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    /// Timeouts, 5xx and 429 responses.
    Retryable(String),
    Fatal(String),
}

impl fmt::Display for TransportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransportError::Retryable(m) => write!(f, "retryable: {m}"),
            TransportError::Fatal(m) => write!(f, "fatal: {m}"),
        }
    }
}

pub trait Transport: Send + Sync {
    fn complete(&self, request: &GenerationRequest) -> std::result::Result<String, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn complete(&self, request: &GenerationRequest) -> std::result::Result<String, TransportError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff_ms: 1000,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.multiplier.powi(attempt as i32 - 1);
        Duration::from_millis(ms as u64)
    }
}

/// Token bucket holding at most one second's worth of requests.
#[derive(Debug)]
pub struct RateLimiter {
    per_second: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(per_second: f64) -> Result<Self> {
        if !(per_second > 0.0 && per_second.is_finite()) {
            return Err(Error::Config(format!("rate must be positive, got {per_second}")));
        }
        Ok(RateLimiter {
            per_second,
            state: Mutex::new((per_second.max(1.0), Instant::now())),
        })
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut s = self.state.lock().expect("rate limiter lock");
                let now = Instant::now();
                let capacity = self.per_second.max(1.0);
                s.0 = (s.0 + now.duration_since(s.1).as_secs_f64() * self.per_second).min(capacity);
                s.1 = now;
                if s.0 >= 1.0 {
                    s.0 -= 1.0;
                    return;
                }
                (1.0 - s.0) / self.per_second
            };
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CleanMode {
    ContinuationClean,
    VariantClean,
}

impl CleanMode {
    pub fn template(self) -> PromptTemplate {
        match self {
            CleanMode::ContinuationClean => CLEAN_CONTINUATION,
            CleanMode::VariantClean => CLEAN_VARIANT,
        }
    }
}

/// Keeps the first `n` words of `text`, preserving the original spacing
/// between them.
pub fn truncate_words(text: &str, n: usize) -> &str {
    let mut seen = 0;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_word {
                in_word = false;
                if seen == n {
                    return &text[..i];
                }
            }
        } else if !in_word {
            in_word = true;
            seen += 1;
            if seen > n {
                return text[..i].trim_end();
            }
        }
    }
    text
}

pub struct GenClient<T: Transport> {
    transport: T,
    pub retry: RetryPolicy,
    limiter: Option<RateLimiter>,
    pub params: BTreeMap<String, serde_json::Value>,
}

impl<T: Transport> GenClient<T> {
    /// Default retry policy and a 2 requests/s limiter.
    pub fn new(transport: T) -> Self {
        GenClient {
            transport,
            retry: RetryPolicy::default(),
            limiter: Some(RateLimiter::new(2.0).expect("positive rate")),
            params: BTreeMap::new(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, per_second: Option<f64>) -> Result<Self> {
        self.limiter = per_second.map(RateLimiter::new).transpose()?;
        Ok(self)
    }

    pub fn with_params(mut self, params: BTreeMap<String, serde_json::Value>) -> Self {
        self.params = params;
        self
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    /// Sends `request`, retrying retryable failures with exponential backoff.
    pub fn send(&self, request: &GenerationRequest) -> Result<String> {
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            if let Some(l) = &self.limiter {
                l.acquire();
            }
            match self.transport.complete(request) {
                Ok(text) => return Ok(text),
                Err(TransportError::Fatal(m)) => {
                    return Err(Error::Generation {
                        attempts: attempt,
                        message: m,
                    })
                }
                Err(TransportError::Retryable(m)) => {
                    log::warn!("generation attempt {attempt}/{attempts} failed: {m}");
                    last = m;
                    if attempt < attempts {
                        std::thread::sleep(self.retry.backoff(attempt));
                    }
                }
            }
        }
        Err(Error::Generation {
            attempts,
            message: last,
        })
    }

    fn request(&self, profile: EndpointProfile, prompt: String) -> Result<GenerationRequest> {
        let mut req = GenerationRequest::new(profile, prompt)?;
        req.params = self.params.clone();
        Ok(req)
    }

    fn non_empty(text: String) -> Result<String> {
        if text.trim().is_empty() {
            Err(Error::EmptyOutput)
        } else {
            Ok(text)
        }
    }

    /// Continuation of `first_half`, cut to twice its word count.
    pub fn continue_abstract(&self, profile: EndpointProfile, first_half: &str) -> Result<String> {
        if first_half.trim().is_empty() {
            return Err(Error::validation("first_half is empty"));
        }
        let cap = 2 * word_count(first_half);
        let mut req = self.request(profile, CONTINUE.render(&[("first_half", first_half)])?)?;
        req.max_words = Some(cap);
        let out = self.send(&req)?;
        Self::non_empty(truncate_words(out.trim(), cap).to_string())
    }

    /// One comma-separated keyword line.
    pub fn summarize_keywords(&self, abstract_text: &str) -> Result<String> {
        if abstract_text.trim().is_empty() {
            return Err(Error::validation("abstract text is empty"));
        }
        let req = self.request(
            EndpointProfile::Cleaner,
            KEYWORDS.render(&[("input_text", abstract_text)])?,
        )?;
        let out = self.send(&req)?;
        let lines: Vec<&str> = out.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        if lines.len() > 1 {
            log::info!("keyword response had {} lines; joined", lines.len());
        }
        Self::non_empty(lines.join(", "))
    }

    pub fn generate_variant(&self, keyword_line: &str, seed: Option<u64>) -> Result<String> {
        if keyword_line.trim().is_empty() {
            return Err(Error::validation("keyword line is empty"));
        }
        let mut req = self.request(
            EndpointProfile::InstructModel,
            VARIANT.render(&[("line_of_keywords", keyword_line)])?,
        )?;
        if let Some(s) = seed {
            req.params.insert("seed".into(), s.into());
        }
        Self::non_empty(self.send(&req)?.trim().to_string())
    }

    /// `n` variants with decoding seeds `base_seed, base_seed + 1, ...`.
    /// Failed calls are returned in place so callers can log and drop them.
    pub fn generate_variants(&self, keyword_line: &str, n: usize, base_seed: u64) -> Vec<Result<String>> {
        (0..n)
            .map(|i| self.generate_variant(keyword_line, Some(base_seed.wrapping_add(i as u64))))
            .collect()
    }

    /// Cleaned text; an empty reply means everything was commentary and
    /// surfaces as [`Error::EmptyOutput`].
    pub fn clean_text(&self, text: &str, mode: CleanMode) -> Result<String> {
        if text.trim().is_empty() {
            return Err(Error::validation("text to clean is empty"));
        }
        let req = self.request(
            EndpointProfile::Cleaner,
            mode.template().render(&[("input_text", text)])?,
        )?;
        let out = self.send(&req)?;
        Self::non_empty(out.trim().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    /// Replies from a script; echoes the prompt when the script runs out.
    struct Scripted {
        replies: Mutex<Vec<std::result::Result<String, TransportError>>>,
        calls: AtomicU32,
        seen: Mutex<Vec<GenerationRequest>>,
    }

    impl Scripted {
        fn new(mut replies: Vec<std::result::Result<String, TransportError>>) -> Self {
            replies.reverse();
            Scripted {
                replies: Mutex::new(replies),
                calls: AtomicU32::new(0),
                seen: Mutex::new(Vec::new()),
            }
        }
    }

    impl Transport for Scripted {
        fn complete(&self, request: &GenerationRequest) -> std::result::Result<String, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.seen.lock().unwrap().push(request.clone());
            self.replies
                .lock()
                .unwrap()
                .pop()
                .unwrap_or_else(|| Ok(request.prompt.clone()))
        }
    }

    fn client(replies: Vec<std::result::Result<String, TransportError>>) -> GenClient<Scripted> {
        GenClient::new(Scripted::new(replies))
            .with_retry(RetryPolicy {
                initial_backoff_ms: 0,
                ..Default::default()
            })
            .with_rate_limit(None)
            .unwrap()
    }

    #[test]
    fn golden_renderings() {
        assert_eq!(
            CONTINUE.render(&[("first_half", "We studied mice.")]).unwrap(),
            "Continue the following academic article: \"We studied mice."
        );
        assert_eq!(
            CLEAN_CONTINUATION.render(&[("input_text", "X")]).unwrap(),
            "The following text is meant to be a continuation of a scientific abstract. In some of the \
             continuations, however, the AI finishes the abstract and continues with commentary. Please \
             detect potential switches, and remove any commentary: \n\n\"X\"\n\n Output only the cleaned \
             abstract. If the entire text is commentary, output an empty string."
        );
        assert_eq!(
            KEYWORDS.render(&[("input_text", "X")]).unwrap(),
            "The following text is an abstract from a scientific paper:\n\nX\n\nSummarize the abstract in \
             keywords, separate keywords by commas."
        );
        assert_eq!(
            VARIANT.render(&[("line_of_keywords", "a, b")]).unwrap(),
            "Based on the following keywords, write a 100-word abstract for a scientific journal article: \
             \"a, b.\" Reply with the abstract only."
        );
        assert_eq!(
            CLEAN_VARIANT.render(&[("input_text", "X")]).unwrap(),
            "The following text contains a scientific abstract, but sometimes further text:\n\n\"X\"\n\n\
             Please remove any irrelevant text, which can include titles, incomplete sentences, even a \
             comment that an abstract is to follow (\"Abstract: \"). Output only the cleaned abstract."
        );
    }

    #[test]
    fn unfilled_or_unknown_placeholder_fails() {
        assert!(CONTINUE.render(&[]).is_err());
        assert!(CONTINUE.render(&[("first_half", "a"), ("other", "b")]).is_err());
        assert_eq!(VARIANT.placeholders(), vec!["line_of_keywords"]);
    }

    #[test]
    fn braces_in_values_are_literal() {
        let out = KEYWORDS.render(&[("input_text", "{input_text} {x}")]).unwrap();
        assert!(out.contains("{input_text} {x}"));
    }

    #[test]
    fn continuation_is_capped_at_twice_input() {
        let half = vec!["w"; 50].join(" ");
        let reply = vec!["x"; 300].join(" ");
        let c = client(vec![Ok(reply)]);
        let out = c.continue_abstract(EndpointProfile::BaseModel, &half).unwrap();
        assert_eq!(word_count(&out), 100);
        assert_eq!(c.transport().seen.lock().unwrap()[0].max_words, Some(100));
        assert!(c.continue_abstract(EndpointProfile::BaseModel, "  ").is_err());
    }

    #[test]
    fn truncation_keeps_spacing() {
        assert_eq!(truncate_words("a  b\nc d", 3), "a  b\nc");
        assert_eq!(truncate_words("a b", 5), "a b");
        assert_eq!(truncate_words("a b ", 2), "a b");
        assert_eq!(truncate_words("", 2), "");
    }

    #[test]
    fn keywords_are_trimmed_and_joined() {
        let c = client(vec![
            Ok("  mice, sleep  \n".into()),
            Ok("mice\n\nsleep, memory\n".into()),
        ]);
        assert_eq!(c.summarize_keywords("abstract").unwrap(), "mice, sleep");
        assert_eq!(c.summarize_keywords("abstract").unwrap(), "mice, sleep, memory");
    }

    #[test]
    fn retries_then_gives_up() {
        let c = client(vec![Err(TransportError::Retryable("503".into())), Ok("fine".into())]);
        assert_eq!(c.generate_variant("k", None).unwrap(), "fine");
        assert_eq!(c.transport().calls.load(Ordering::SeqCst), 2);

        let c = client(vec![Err(TransportError::Retryable("503".into())); 3]);
        match c.generate_variant("k", None) {
            Err(Error::Generation { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("{other:?}"),
        }

        let c = client(vec![Err(TransportError::Fatal("401".into()))]);
        assert!(matches!(
            c.generate_variant("k", None),
            Err(Error::Generation { attempts: 1, .. })
        ));
        assert_eq!(c.transport().calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn variants_get_distinct_seeds() {
        let c = client(vec![]);
        let out = c.generate_variants("a, b", 4, 10);
        assert!(out.iter().all(|r| r.is_ok()));
        let seeds: Vec<u64> = c
            .transport()
            .seen
            .lock()
            .unwrap()
            .iter()
            .map(|r| r.params["seed"].as_u64().unwrap())
            .collect();
        assert_eq!(seeds, vec![10, 11, 12, 13]);
        assert!(c.generate_variant("", None).is_err());
    }

    #[test]
    fn empty_clean_is_signalled() {
        let c = client(vec![Ok("   ".into())]);
        assert!(matches!(
            c.clean_text("all commentary", CleanMode::ContinuationClean),
            Err(Error::EmptyOutput)
        ));
    }

    #[test]
    fn echo_cleaner_is_identity() {
        struct Echo;
        impl Transport for Echo {
            fn complete(&self, r: &GenerationRequest) -> std::result::Result<String, TransportError> {
                let start = r.prompt.find('"').unwrap() + 1;
                let end = r.prompt.rfind('"').unwrap();
                Ok(r.prompt[start..end].to_string())
            }
        }
        let c = GenClient::new(Echo).with_rate_limit(None).unwrap();
        assert_eq!(
            c.clean_text("Some abstract.", CleanMode::ContinuationClean).unwrap(),
            "Some abstract."
        );
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let l = RateLimiter::new(20.0).unwrap();
        let start = Instant::now();
        for _ in 0..25 {
            l.acquire();
        }
        // 20 from the full bucket, then 5 more at 20/s.
        assert!(start.elapsed() >= Duration::from_millis(200));
    }
}
