//! Polite sequential HTTP acquisition into the archive.
//!
//! A job names a source, a URL strategy and politeness limits. URLs are
//! requested one at a time with at least `1 / rateLimit` seconds between
//! request starts, retries included. URLs already archived for the source are
//! skipped, so an interrupted job can be restarted.

use std::io::Read;
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{Archive, ArchiveError};

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("invalid fetch job: {0}")]
    Config(String),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("cannot read job file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum UrlStrategy {
    ExplicitList {
        urls: Vec<String>,
    },
    #[serde(rename_all = "camelCase")]
    IdTemplate { pattern: String, id_from: u64, id_to: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FetchJob {
    pub source: String,
    pub url_strategy: UrlStrategy,
    /// Maximum requests per second.
    pub rate_limit: f64,
    /// Extra attempts after the first failed one.
    #[serde(default)]
    pub retries: u32,
    /// Per-request timeout in seconds.
    #[serde(default = "default_timeout")]
    pub timeout: f64,
}

fn default_timeout() -> f64 {
    30.0
}

const PLACEHOLDER: &str = "{}";

impl FetchJob {
    pub fn validate(&self) -> Result<(), FetchError> {
        if self.source.trim().is_empty() {
            return Err(FetchError::Config("source must be non-empty".into()));
        }
        if !(self.rate_limit.is_finite() && self.rate_limit > 0.0) {
            return Err(FetchError::Config(format!("rateLimit must be > 0, got {}", self.rate_limit)));
        }
        if !(self.timeout.is_finite() && self.timeout > 0.0) {
            return Err(FetchError::Config(format!("timeout must be > 0, got {}", self.timeout)));
        }
        if let UrlStrategy::IdTemplate { pattern, id_from, id_to } = &self.url_strategy {
            if pattern.matches(PLACEHOLDER).count() != 1 {
                return Err(FetchError::Config(format!(
                    "pattern {pattern:?} must contain exactly one {PLACEHOLDER} placeholder"
                )));
            }
            if id_from > id_to {
                return Err(FetchError::Config(format!("idFrom {id_from} > idTo {id_to}")));
            }
        }
        Ok(())
    }

    /// Parse a job from JSON, or from TOML when the text is not JSON.
    pub fn parse(text: &str) -> Result<Self, FetchError> {
        let job: FetchJob = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| FetchError::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| FetchError::Config(e.to_string()))?
        };
        job.validate()?;
        Ok(job)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FetchError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

pub fn generate_urls(job: &FetchJob) -> Result<Vec<String>, FetchError> {
    job.validate()?;
    Ok(match &job.url_strategy {
        UrlStrategy::ExplicitList { urls } => urls.clone(),
        UrlStrategy::IdTemplate { pattern, id_from, id_to } => {
            (*id_from..=*id_to).map(|id| pattern.replacen(PLACEHOLDER, &id.to_string(), 1)).collect()
        }
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UrlFailure {
    pub url: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchReport {
    pub fetched: usize,
    pub failed: usize,
    pub skipped: usize,
    pub failures: Vec<UrlFailure>,
}

enum Attempt {
    Ok { content_type: String, body: Vec<u8> },
    Failed(String),
}

/// Spaces request starts at least `interval` apart.
struct Throttle {
    interval: Duration,
    last: Option<Instant>,
}

impl Throttle {
    fn wait(&mut self) {
        if let Some(last) = self.last {
            let due = last + self.interval;
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
        self.last = Some(Instant::now());
    }
}

fn attempt(agent: &ureq::Agent, url: &str) -> Attempt {
    match agent.get(url).call() {
        Ok(resp) if (200..300).contains(&resp.status()) => {
            let content_type = resp.header("Content-Type").unwrap_or("").to_string();
            let mut body = Vec::new();
            match resp.into_reader().read_to_end(&mut body) {
                Ok(_) if body.is_empty() => Attempt::Failed("empty response body".into()),
                Ok(_) => Attempt::Ok { content_type, body },
                Err(e) => Attempt::Failed(format!("reading body: {e}")),
            }
        }
        Ok(resp) => Attempt::Failed(format!("HTTP {}", resp.status())),
        Err(ureq::Error::Status(code, _)) => Attempt::Failed(format!("HTTP {code}")),
        Err(e) => Attempt::Failed(e.to_string()),
    }
}

/// Request every URL of the job and archive each 2xx body under the job's
/// source with the Content-Type header exactly as received (empty when the
/// server sent none). Network and HTTP failures are counted per URL; only an
/// archive error aborts the job.
pub fn fetch_and_archive(job: &FetchJob, store: &Archive) -> Result<FetchReport, FetchError> {
    let urls = generate_urls(job)?;
    let agent = ureq::AgentBuilder::new()
        .timeout(Duration::from_secs_f64(job.timeout))
        .build();
    let mut throttle = Throttle {
        interval: Duration::from_secs_f64(1.0 / job.rate_limit),
        last: None,
    };
    let mut report = FetchReport::default();
    for url in &urls {
        if store.contains_url(&job.source, url) {
            report.skipped += 1;
            continue;
        }
        let mut last_reason = String::new();
        let mut stored = false;
        for _ in 0..=job.retries {
            throttle.wait();
            match attempt(&agent, url) {
                Attempt::Ok { content_type, body } => {
                    store.put(&job.source, url, &content_type, &body)?;
                    stored = true;
                    break;
                }
                Attempt::Failed(reason) => {
                    tracing::debug!(%url, %reason, "fetch attempt failed");
                    last_reason = reason;
                }
            }
        }
        if stored {
            report.fetched += 1;
        } else {
            report.failed += 1;
            report.failures.push(UrlFailure { url: url.clone(), reason: last_reason });
        }
    }
    Ok(report)
}
