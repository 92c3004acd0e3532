//! Evaluation measures: perplexity, token F1, Kendall's tau, logical
//! coverage and denotation accuracy.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::dataset::{Dataset, Example, Provenance};
use crate::executor::{denotation_equal, execute, Database};
use crate::program::Program;
use crate::scorer::{check_batch, LogProb, Scorer, ScorerError};

#[derive(Clone, Debug, PartialEq)]
pub enum MetricError {
    EmptyCorpus,
    /// Perplexity is undefined for an utterance with no tokens.
    ZeroLength {
        index: usize,
    },
    EmptyReference,
    LengthMismatch {
        preds: usize,
        golds: usize,
    },
    Scorer(ScorerError),
}

impl fmt::Display for MetricError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricError::EmptyCorpus => write!(f, "perplexity of an empty corpus is undefined"),
            MetricError::ZeroLength { index } => write!(f, "utterance {index} has no tokens"),
            MetricError::EmptyReference => write!(f, "coverage against an empty reference is undefined"),
            MetricError::LengthMismatch { preds, golds } => {
                write!(f, "{preds} predictions but {golds} gold programs")
            }
            MetricError::Scorer(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for MetricError {}

/// `exp(mean_u(-logprob(u) / |u|))`: per-utterance token NLL, averaged
/// over utterances, then exponentiated.
pub fn perplexity_of(scores: &[LogProb]) -> Result<f64, MetricError> {
    if scores.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut sum = 0.0;
    for (index, s) in scores.iter().enumerate() {
        if s.token_count == 0 {
            return Err(MetricError::ZeroLength { index });
        }
        sum += -s.logprob / s.token_count as f64;
    }
    Ok(libm::exp(sum / scores.len() as f64))
}

/// Standard corpus-level perplexity, `exp(-sum logprob / sum |u|)`.
pub fn corpus_perplexity_of(scores: &[LogProb]) -> Result<f64, MetricError> {
    if scores.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    if let Some(index) = scores.iter().position(|s| s.token_count == 0) {
        return Err(MetricError::ZeroLength { index });
    }
    let nll: f64 = scores.iter().map(|s| -s.logprob).sum();
    let tokens: usize = scores.iter().map(|s| s.token_count).sum();
    Ok(libm::exp(nll / tokens as f64))
}

fn score_all<S: Scorer + ?Sized>(utts: &[Vec<String>], scorer: &S) -> Result<Vec<LogProb>, MetricError> {
    let scores = scorer.score_batch(utts).map_err(MetricError::Scorer)?;
    check_batch(utts.len(), &scores).map_err(MetricError::Scorer)?;
    Ok(scores)
}

pub fn perplexity<S: Scorer + ?Sized>(utts: &[Vec<String>], scorer: &S) -> Result<f64, MetricError> {
    if utts.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    perplexity_of(&score_all(utts, scorer)?)
}

pub fn corpus_perplexity<S: Scorer + ?Sized>(utts: &[Vec<String>], scorer: &S) -> Result<f64, MetricError> {
    if utts.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    corpus_perplexity_of(&score_all(utts, scorer)?)
}

fn bag(tokens: &[String]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

/// F1 over token multisets.
pub fn token_f1(u: &[String], v: &[String]) -> f64 {
    match (u.is_empty(), v.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let bu = bag(u);
    let bv = bag(v);
    let overlap: usize = bu.iter().map(|(w, c)| (*c).min(bv.get(w).copied().unwrap_or(0))).sum();
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / v.len() as f64;
    let r = overlap as f64 / u.len() as f64;
    2.0 * p * r / (p + r)
}

/// Positions of the first occurrence of each token.
fn first_positions(tokens: &[String]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for (i, t) in tokens.iter().enumerate() {
        m.entry(t.as_str()).or_insert(i);
    }
    m
}

/// Rank correlation of the shared tokens' order in `u` and `v`, each token
/// placed at its first occurrence. `None` when fewer than two tokens are
/// shared.
pub fn kendall_tau(u: &[String], v: &[String]) -> Option<f64> {
    let pu = first_positions(u);
    let pv = first_positions(v);
    let mut shared: Vec<(usize, usize)> = pu.iter().filter_map(|(w, i)| pv.get(w).map(|j| (*i, *j))).collect();
    let n = shared.len();
    if n < 2 {
        return None;
    }
    shared.sort_unstable();
    let mut inversions = 0usize;
    for a in 0..n {
        for b in a + 1..n {
            if shared[a].1 > shared[b].1 {
                inversions += 1;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Some(1.0 - 2.0 * inversions as f64 / pairs)
}

/// Fraction of reference examples whose template occurs in `candidate`.
pub fn logical_coverage(reference: &Dataset, candidate: &Dataset) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let templates = candidate.templates();
    let hit = reference.iter().filter(|e| templates.contains(&e.template)).count();
    Ok(hit as f64 / reference.len() as f64)
}

/// How to score pairs whose gold denotation is empty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EmptyDenotationPolicy {
    /// An empty prediction matches an empty gold.
    Match,
    /// Empty golds never count as correct; they are reported separately.
    #[default]
    Flag,
}

impl EmptyDenotationPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            EmptyDenotationPolicy::Match => "match",
            EmptyDenotationPolicy::Flag => "flag",
        }
    }
}

impl core::str::FromStr for EmptyDenotationPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "match" => Ok(EmptyDenotationPolicy::Match),
            "flag" => Ok(EmptyDenotationPolicy::Flag),
            other => Err(alloc::format!(
                "unknown empty-denotation policy `{other}` (expected match or flag)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Accuracy {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub pred_errors: usize,
    /// Gold programs that failed to execute; always counted as wrong.
    pub gold_errors: usize,
    pub empty_gold: usize,
}

/// Fraction of pairs whose predicted program executes to the gold
/// program's denotation. An empty pair list scores 0.
pub fn denotation_accuracy(
    preds: &[Program],
    golds: &[Program],
    db: &Database,
    policy: EmptyDenotationPolicy,
) -> Result<Accuracy, MetricError> {
    if preds.len() != golds.len() {
        return Err(MetricError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    let mut acc = Accuracy {
        total: preds.len(),
        ..Accuracy::default()
    };
    for (p, g) in preds.iter().zip(golds) {
        let gold = match execute(g, db) {
            Ok(d) => d,
            Err(_) => {
                acc.gold_errors += 1;
                continue;
            }
        };
        if gold.is_empty() {
            acc.empty_gold += 1;
            if policy == EmptyDenotationPolicy::Flag {
                continue;
            }
        }
        match execute(p, db) {
            Ok(pred) if denotation_equal(&pred, &gold) => acc.correct += 1,
            Ok(_) => {}
            Err(_) => acc.pred_errors += 1,
        }
    }
    if acc.total > 0 {
        acc.accuracy = acc.correct as f64 / acc.total as f64;
    }
    Ok(acc)
}

/// Pairs each candidate with the reference example it was paraphrased
/// from, or failing that the reference example with the same id.
pub fn align<'a>(reference: &'a Dataset, candidate: &'a Dataset) -> Vec<(&'a Example, &'a Example)> {
    let by_id: BTreeMap<&str, &Example> = reference.iter().map(|e| (e.id.as_str(), e)).collect();
    candidate
        .iter()
        .filter_map(|c| {
            let source = match &c.provenance {
                Provenance::Paraphrased { source, .. } => by_id.get(source.as_str()),
                _ => None,
            };
            source.or_else(|| by_id.get(c.id.as_str())).map(|r| (*r, c))
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub perplexity: Option<f64>,
    pub corpus_perplexity: Option<f64>,
    pub token_f1_mean: Option<f64>,
    pub kendall_tau_mean: Option<f64>,
    pub logical_coverage: Option<f64>,
    pub denotation_accuracy: Option<f64>,
    pub reference_count: usize,
    pub candidate_count: usize,
    pub aligned_pairs: usize,
    /// Aligned pairs sharing fewer than two tokens, left out of the tau mean.
    pub tau_excluded: usize,
    pub accuracy: Option<Accuracy>,
}

impl MetricReport {
    /// Names of fields whose value falls outside its range.
    pub fn out_of_range(&self) -> Vec<&'static str> {
        let unit = |v: Option<f64>| v.is_some_and(|x| !(0.0..=1.0).contains(&x));
        let mut bad = Vec::new();
        if self.perplexity.is_some_and(|x| x.is_nan() || x < 1.0) {
            bad.push("perplexity");
        }
        if self.corpus_perplexity.is_some_and(|x| x.is_nan() || x < 1.0) {
            bad.push("corpus_perplexity");
        }
        if unit(self.token_f1_mean) {
            bad.push("token_f1_mean");
        }
        if self.kendall_tau_mean.is_some_and(|x| !(-1.0..=1.0).contains(&x)) {
            bad.push("kendall_tau_mean");
        }
        if unit(self.logical_coverage) {
            bad.push("logical_coverage");
        }
        if unit(self.denotation_accuracy) {
            bad.push("denotation_accuracy");
        }
        bad
    }
}

/// Compares a candidate dataset against a reference. Perplexity is over
/// the candidate utterances; accuracy executes each aligned candidate
/// program against its reference program.
pub fn report(
    reference: &Dataset,
    candidate: &Dataset,
    scorer: Option<&dyn Scorer>,
    db: Option<&Database>,
    policy: EmptyDenotationPolicy,
) -> Result<MetricReport, MetricError> {
    let mut r = MetricReport {
        reference_count: reference.len(),
        candidate_count: candidate.len(),
        ..MetricReport::default()
    };
    if !reference.is_empty() {
        r.logical_coverage = Some(logical_coverage(reference, candidate)?);
    }
    let pairs = align(reference, candidate);
    r.aligned_pairs = pairs.len();
    if !pairs.is_empty() {
        let f1: f64 = pairs.iter().map(|(a, b)| token_f1(&a.utterance, &b.utterance)).sum();
        r.token_f1_mean = Some(f1 / pairs.len() as f64);
        let taus: Vec<f64> = pairs
            .iter()
            .filter_map(|(a, b)| kendall_tau(&a.utterance, &b.utterance))
            .collect();
        r.tau_excluded = pairs.len() - taus.len();
        if !taus.is_empty() {
            r.kendall_tau_mean = Some(taus.iter().sum::<f64>() / taus.len() as f64);
        }
    }
    if let Some(scorer) = scorer {
        let utts: Vec<Vec<String>> = candidate
            .iter()
            .map(|e| e.utterance.clone())
            .filter(|u| !u.is_empty())
            .collect();
        if !utts.is_empty() {
            let scores = score_all(&utts, scorer)?;
            r.perplexity = Some(perplexity_of(&scores)?);
            r.corpus_perplexity = Some(corpus_perplexity_of(&scores)?);
        }
    }
    if let Some(db) = db {
        let preds: Vec<Program> = pairs.iter().map(|(_, c)| c.program.clone()).collect();
        let golds: Vec<Program> = pairs.iter().map(|(g, _)| g.program.clone()).collect();
        let acc = denotation_accuracy(&preds, &golds, db, policy)?;
        if acc.total > 0 {
            r.denotation_accuracy = Some(acc.accuracy);
        }
        r.accuracy = Some(acc);
    }
    Ok(r)
}
