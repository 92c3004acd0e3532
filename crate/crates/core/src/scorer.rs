//! Naturalness scoring contract and the built-in unigram stub.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Total natural-log probability of an utterance under a scorer, with the
/// length of the scorer's own tokenization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogProb {
    pub logprob: f64,
    pub token_count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScorerError {
    EmptyCorpus,
    Transport(String),
    /// A response that breaks the contract (wrong length, non-finite value).
    Protocol(String),
}

impl fmt::Display for ScorerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScorerError::EmptyCorpus => write!(f, "cannot fit a unigram model on an empty corpus"),
            ScorerError::Transport(m) => write!(f, "scorer transport failure: {m}"),
            ScorerError::Protocol(m) => write!(f, "scorer protocol violation: {m}"),
        }
    }
}

impl core::error::Error for ScorerError {}

pub trait Scorer {
    /// Scores each utterance; the output is aligned with the input.
    fn score_batch(&self, utterances: &[Vec<String>]) -> Result<Vec<LogProb>, ScorerError>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score_batch(&self, utterances: &[Vec<String>]) -> Result<Vec<LogProb>, ScorerError> {
        (**self).score_batch(utterances)
    }
}

fn stub_tokens(utterance: &[String]) -> impl Iterator<Item = String> + '_ {
    utterance
        .iter()
        .flat_map(|t| t.split_whitespace())
        .map(|t| t.to_lowercase())
}

/// Add-one smoothed unigram model: `p(w) = (count(w) + 1) / (N + V + 1)`,
/// where the extra slot is the unknown-word mass.
#[derive(Clone, Debug, PartialEq)]
pub struct UnigramStub {
    counts: BTreeMap<String, u64>,
    total: u64,
}

impl UnigramStub {
    pub fn fit(corpus: &[Vec<String>]) -> Result<UnigramStub, ScorerError> {
        if corpus.is_empty() {
            return Err(ScorerError::EmptyCorpus);
        }
        let mut counts = BTreeMap::new();
        let mut total = 0;
        for utt in corpus {
            for tok in stub_tokens(utt) {
                *counts.entry(tok).or_insert(0) += 1;
                total += 1;
            }
        }
        Ok(UnigramStub { counts, total })
    }

    pub fn vocabulary_size(&self) -> usize {
        self.counts.len()
    }

    fn denominator(&self) -> f64 {
        (self.total + self.counts.len() as u64 + 1) as f64
    }

    pub fn prob(&self, token: &str) -> f64 {
        let c = self.counts.get(&token.to_lowercase()).copied().unwrap_or(0);
        (c + 1) as f64 / self.denominator()
    }

    pub fn unknown_prob(&self) -> f64 {
        1.0 / self.denominator()
    }

    /// Probabilities of every vocabulary word followed by the unknown mass.
    pub fn distribution(&self) -> impl Iterator<Item = (Option<&str>, f64)> {
        let denom = self.denominator();
        self.counts
            .iter()
            .map(move |(w, c)| (Some(w.as_str()), (c + 1) as f64 / denom))
            .chain(core::iter::once((None, 1.0 / denom)))
    }
}

impl Scorer for UnigramStub {
    fn score_batch(&self, utterances: &[Vec<String>]) -> Result<Vec<LogProb>, ScorerError> {
        Ok(utterances
            .iter()
            .map(|u| {
                let mut logprob = 0.0;
                let mut token_count = 0;
                for t in stub_tokens(u) {
                    logprob += libm::log(self.prob(&t));
                    token_count += 1;
                }
                LogProb { logprob, token_count }
            })
            .collect())
    }
}

/// Assigns the same log-probability to every token.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformScorer {
    pub token_logprob: f64,
}

impl Scorer for UniformScorer {
    fn score_batch(&self, utterances: &[Vec<String>]) -> Result<Vec<LogProb>, ScorerError> {
        Ok(utterances
            .iter()
            .map(|u| {
                let n = stub_tokens(u).count();
                LogProb {
                    logprob: self.token_logprob * n as f64,
                    token_count: n,
                }
            })
            .collect())
    }
}

/// Checks a batch response against the contract.
pub fn check_batch(expected: usize, results: &[LogProb]) -> Result<(), ScorerError> {
    if results.len() != expected {
        return Err(ScorerError::Protocol(alloc::format!(
            "expected {expected} results, got {}",
            results.len()
        )));
    }
    if let Some(bad) = results.iter().find(|r| !r.logprob.is_finite()) {
        return Err(ScorerError::Protocol(alloc::format!(
            "non-finite logprob {}",
            bad.logprob
        )));
    }
    Ok(())
}
