//! HTTP clients for the model adapter's `/score` and `/paraphrase`
//! endpoints.

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use synthparse_core::paraphrase::{ParaphraseError, Paraphraser};
use synthparse_core::scorer::{check_batch, LogProb, Scorer, ScorerError};
use synthparse_core::tokenize;
use ureq::Agent;

/// Environment variable that overrides the configured adapter URL.
pub const ADAPTER_URL_ENV: &str = "SYNTHPARSE_ADAPTER_URL";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

/// The URL to use: the environment override if set and non-empty, else
/// the configured one.
pub fn adapter_url(configured: Option<&str>) -> Option<String> {
    choose_url(std::env::var(ADAPTER_URL_ENV).ok().as_deref(), configured)
}

fn choose_url(env: Option<&str>, configured: Option<&str>) -> Option<String> {
    match env.map(str::trim) {
        Some(v) if !v.is_empty() => Some(v.to_string()),
        _ => configured.map(str::to_string),
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    utterances: &'a [String],
}

#[derive(Deserialize)]
struct ScoreResult {
    logprob: f64,
    token_count: usize,
}

#[derive(Deserialize)]
struct ScoreResponse {
    results: Vec<ScoreResult>,
}

#[derive(Serialize)]
struct ParaphraseRequest<'a> {
    utterance: &'a str,
    beam: usize,
    wh_prefixes: Option<&'a [String]>,
}

#[derive(Deserialize)]
struct ParaphraseResponse {
    candidates: Vec<String>,
}

fn agent(timeout: Duration) -> Agent {
    Agent::config_builder().timeout_global(Some(timeout)).build().into()
}

fn endpoint(base: &str, path: &str) -> String {
    format!("{}/{path}", base.trim_end_matches('/'))
}

enum CallError {
    Transport(String),
    Protocol(String),
}

fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
    agent: &Agent,
    url: &str,
    body: &Req,
) -> Result<Resp, CallError> {
    let mut resp = agent
        .post(url)
        .send_json(body)
        .map_err(|e| CallError::Transport(format!("POST {url}: {e}")))?;
    resp.body_mut()
        .read_json::<Resp>()
        .map_err(|e| CallError::Protocol(format!("POST {url}: malformed response: {e}")))
}

/// Scores through `POST <base>/score`, `batch_size` utterances per request.
#[derive(Clone, Debug)]
pub struct RemoteScorer {
    agent: Agent,
    base_url: String,
    pub batch_size: usize,
}

impl RemoteScorer {
    pub fn new(base_url: impl Into<String>, batch_size: usize) -> Self {
        RemoteScorer {
            agent: agent(DEFAULT_TIMEOUT),
            base_url: base_url.into(),
            batch_size: batch_size.max(1),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }
}

impl Scorer for RemoteScorer {
    fn score_batch(&self, utterances: &[Vec<String>]) -> Result<Vec<LogProb>, ScorerError> {
        let url = endpoint(&self.base_url, "score");
        let mut out = Vec::with_capacity(utterances.len());
        for chunk in utterances.chunks(self.batch_size) {
            let texts: Vec<String> = chunk.iter().map(|u| u.join(" ")).collect();
            let resp: ScoreResponse =
                post(&self.agent, &url, &ScoreRequest { utterances: &texts }).map_err(|e| match e {
                    CallError::Transport(m) => ScorerError::Transport(m),
                    CallError::Protocol(m) => ScorerError::Protocol(m),
                })?;
            let results: Vec<LogProb> = resp
                .results
                .into_iter()
                .map(|r| LogProb {
                    logprob: r.logprob,
                    token_count: r.token_count,
                })
                .collect();
            check_batch(chunk.len(), &results)?;
            out.extend(results);
        }
        Ok(out)
    }
}

/// Paraphrases through `POST <base>/paraphrase`.
#[derive(Clone, Debug)]
pub struct RemoteParaphraser {
    agent: Agent,
    base_url: String,
}

impl RemoteParaphraser {
    pub fn new(base_url: impl Into<String>) -> Self {
        RemoteParaphraser {
            agent: agent(DEFAULT_TIMEOUT),
            base_url: base_url.into(),
        }
    }
}

impl Paraphraser for RemoteParaphraser {
    fn generate(
        &self,
        utterance: &[String],
        beam: usize,
        wh_prefixes: Option<&[String]>,
    ) -> Result<Vec<Vec<String>>, ParaphraseError> {
        let url = endpoint(&self.base_url, "paraphrase");
        let text = utterance.join(" ");
        let req = ParaphraseRequest {
            utterance: &text,
            beam,
            wh_prefixes,
        };
        let resp: ParaphraseResponse = post(&self.agent, &url, &req).map_err(|e| match e {
            CallError::Transport(m) => ParaphraseError::Transport(m),
            CallError::Protocol(m) => ParaphraseError::Protocol(m),
        })?;
        if resp.candidates.len() > beam {
            return Err(ParaphraseError::Protocol(format!(
                "{} candidates for beam {beam}",
                resp.candidates.len()
            )));
        }
        let distinct: BTreeSet<&String> = resp.candidates.iter().collect();
        if distinct.len() != resp.candidates.len() {
            return Err(ParaphraseError::Protocol("duplicate candidates".into()));
        }
        Ok(resp.candidates.iter().map(|c| tokenize(c)).collect())
    }
}
