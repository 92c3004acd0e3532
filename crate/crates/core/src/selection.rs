//! Naturalness-driven selection and validation-set sampling over scored
//! datasets.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::dataset::{Dataset, DatasetName, Example, Provenance};
use crate::program::TemplateKey;
use crate::scorer::{check_batch, Scorer, ScorerError};

pub const DEFAULT_TOP_K: usize = 2000;
pub const DEFAULT_DELTA: f64 = 5.0;
pub const DEFAULT_ALPHA: f64 = 0.4;
pub const DEFAULT_VAL_SIZE: usize = 2000;

#[derive(Clone, Debug, PartialEq)]
pub enum SelectionError {
    /// Scorer failure while scoring the batch at `batch` (0-based).
    Scoring {
        batch: usize,
        source: ScorerError,
    },
    Unscored {
        id: String,
    },
    InvalidConfig(String),
    TooSmall {
        have: usize,
        want: usize,
    },
}

impl fmt::Display for SelectionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionError::Scoring { batch, source } => write!(f, "scoring batch {batch} failed: {source}"),
            SelectionError::Unscored { id } => write!(f, "example `{id}` has no score"),
            SelectionError::InvalidConfig(m) => write!(f, "invalid configuration: {m}"),
            SelectionError::TooSmall { have, want } => {
                write!(f, "cannot sample {want} examples from a dataset of {have}")
            }
        }
    }
}

impl core::error::Error for SelectionError {}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectionConfig {
    /// Template groups kept per depth bucket.
    pub top_k: usize,
    /// Largest allowed log-probability gap to the group best.
    pub delta: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            top_k: DEFAULT_TOP_K,
            delta: DEFAULT_DELTA,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        if self.top_k < 1 {
            return Err(SelectionError::InvalidConfig("top-k must be at least 1".into()));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(SelectionError::InvalidConfig(
                "delta must be a finite value >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingConfig {
    pub alpha: f64,
    pub size: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            alpha: DEFAULT_ALPHA,
            size: DEFAULT_VAL_SIZE,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        if self.size < 1 {
            return Err(SelectionError::InvalidConfig("sample size must be at least 1".into()));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(SelectionError::InvalidConfig(
                "alpha must be a finite value >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Sets every example's score to the scorer's total log-probability,
/// calling the scorer `batch_size` utterances at a time.
pub fn score_dataset<S: Scorer + ?Sized>(
    dataset: &Dataset,
    scorer: &S,
    batch_size: usize,
) -> Result<Dataset, SelectionError> {
    let batch_size = batch_size.max(1);
    let mut out = dataset.clone();
    for (batch, chunk) in out.examples.chunks_mut(batch_size).enumerate() {
        let utts: Vec<Vec<String>> = chunk.iter().map(|e| e.utterance.clone()).collect();
        let results = scorer
            .score_batch(&utts)
            .and_then(|r| check_batch(utts.len(), &r).map(|_| r))
            .map_err(|source| SelectionError::Scoring { batch, source })?;
        for (e, r) in chunk.iter_mut().zip(results) {
            e.score = Some(r.logprob);
        }
    }
    Ok(out)
}

/// Per-bucket bookkeeping from [`select_top_k`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BucketReport {
    pub depth: u32,
    pub input: usize,
    pub groups: usize,
    pub groups_kept: usize,
    /// Members removed by the gap rule inside kept groups.
    pub pruned_by_gap: usize,
    pub selected: usize,
}

fn score_of(e: &Example) -> Result<f64, SelectionError> {
    match e.score {
        Some(s) if s.is_finite() => Ok(s),
        _ => Err(SelectionError::Unscored { id: e.id.clone() }),
    }
}

/// Higher score first; ties by rendered program, then utterance.
fn better(a: (f64, &str, &str), b: (f64, &str, &str)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| a.1.cmp(b.1))
        .then_with(|| a.2.cmp(b.2))
}

/// Keeps, per depth bucket, the members within `delta` of their template
/// group's best utterance, from the `top_k` groups with the highest best
/// score. Survivors keep their input order; buckets are concatenated
/// depth-ascending.
pub fn select_top_k(
    buckets: &BTreeMap<u32, Dataset>,
    cfg: &SelectionConfig,
) -> Result<(Dataset, Vec<BucketReport>), SelectionError> {
    cfg.validate()?;
    let mut out = Dataset::new(DatasetName::Canonical);
    let mut reports = Vec::new();
    for (&depth, bucket) in buckets {
        let scores: Vec<f64> = bucket.iter().map(score_of).collect::<Result<_, _>>()?;
        let renders: Vec<String> = bucket.iter().map(|e| e.program.render()).collect();
        let texts: Vec<String> = bucket.iter().map(Example::text).collect();

        // template -> index of best member
        let mut best: BTreeMap<&TemplateKey, usize> = BTreeMap::new();
        for (i, e) in bucket.iter().enumerate() {
            let entry = best.entry(&e.template).or_insert(i);
            let cur = *entry;
            if better(
                (scores[i], &renders[i], &texts[i]),
                (scores[cur], &renders[cur], &texts[cur]),
            ) == Ordering::Less
            {
                *entry = i;
            }
        }
        let mut ranked: Vec<(&TemplateKey, usize)> = best.iter().map(|(t, i)| (*t, *i)).collect();
        ranked.sort_by(|a, b| {
            better(
                (scores[a.1], &renders[a.1], &texts[a.1]),
                (scores[b.1], &renders[b.1], &texts[b.1]),
            )
        });
        ranked.truncate(cfg.top_k);
        let kept: BTreeMap<&TemplateKey, f64> = ranked.iter().map(|(t, i)| (*t, scores[*i])).collect();

        let mut report = BucketReport {
            depth,
            input: bucket.len(),
            groups: best.len(),
            groups_kept: kept.len(),
            ..BucketReport::default()
        };
        for (i, e) in bucket.iter().enumerate() {
            let Some(&top) = kept.get(&e.template) else {
                continue;
            };
            if top - scores[i] > cfg.delta {
                report.pruned_by_gap += 1;
                continue;
            }
            out.examples.push(e.clone());
            report.selected += 1;
        }
        reports.push(report);
    }
    Ok((out, reports))
}

/// Uniform draw in (0, 1) from the top 53 bits.
fn open_unit(rng: &mut Xoshiro256PlusPlus) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Exponential-sort keys `u^(1/w)` for weights `w_i = exp(log_weights[i])`,
/// kept in log form (`ln u / w`) and compared through the monotone Gumbel
/// transform `ln w - ln(-ln u)` so that tiny weights do not underflow.
fn sort_keys(log_weights: &[f64], seed: u64) -> Vec<f64> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    log_weights
        .iter()
        .map(|lw| {
            let u = open_unit(&mut rng);
            lw - libm::log(-libm::log(u))
        })
        .collect()
}

/// Indices of a seeded weighted draw without replacement, in draw order.
pub fn weighted_order(log_weights: &[f64], seed: u64) -> Vec<usize> {
    let keys = sort_keys(log_weights, seed);
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|a, b| keys[*b].total_cmp(&keys[*a]).then(a.cmp(b)));
    idx
}

/// A uniformly random permutation of `0..n` under `seed`: the reference
/// that an unweighted draw must reproduce.
pub fn uniform_shuffle(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let u: Vec<f64> = (0..n).map(|_| open_unit(&mut rng)).collect();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|a, b| u[*b].total_cmp(&u[*a]).then(a.cmp(b)));
    idx
}

/// Draws `cfg.size` examples without replacement with weight
/// `exp(alpha * score)`. Returns the sample, tagged as validation data in
/// draw order, and the remaining examples in their input order.
pub fn sample_validation(dataset: &Dataset, cfg: &SamplingConfig) -> Result<(Dataset, Dataset), SelectionError> {
    cfg.validate()?;
    if dataset.len() < cfg.size {
        return Err(SelectionError::TooSmall {
            have: dataset.len(),
            want: cfg.size,
        });
    }
    let log_weights: Vec<f64> = dataset
        .iter()
        .map(|e| score_of(e).map(|s| cfg.alpha * s))
        .collect::<Result<_, _>>()?;
    let order = weighted_order(&log_weights, cfg.seed);
    let mut taken = alloc::vec![false; dataset.len()];
    let mut val = Dataset::new(DatasetName::Validation);
    for &i in order.iter().take(cfg.size) {
        taken[i] = true;
        let mut e = dataset.examples[i].clone();
        e.provenance = Provenance::Validation;
        val.examples.push(e);
    }
    let rest = Dataset {
        name: dataset.name,
        examples: dataset
            .iter()
            .zip(&taken)
            .filter(|(_, t)| !**t)
            .map(|(e, _)| e.clone())
            .collect(),
    };
    Ok((val, rest))
}
