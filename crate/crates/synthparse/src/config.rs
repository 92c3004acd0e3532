//! The pipeline configuration document.
//!
//! Relative paths inside the document are resolved against the directory
//! of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use synthparse_core::metrics::EmptyDenotationPolicy;
use synthparse_core::paraphrase::{DEFAULT_BEAM, DEFAULT_ITERATIONS};
use synthparse_core::selection::{DEFAULT_ALPHA, DEFAULT_DELTA, DEFAULT_TOP_K, DEFAULT_VAL_SIZE};
use synthparse_core::synthesis::DEFAULT_MAX_EXAMPLES;

use crate::error::{Error, Result};
use crate::remote::adapter_url;

fn default_max_depth() -> u32 {
    6
}
fn default_max_examples() -> usize {
    DEFAULT_MAX_EXAMPLES
}
fn default_top_k() -> usize {
    DEFAULT_TOP_K
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_val_size() -> usize {
    DEFAULT_VAL_SIZE
}
fn default_iterations() -> u32 {
    DEFAULT_ITERATIONS
}
fn default_beam() -> usize {
    DEFAULT_BEAM
}
fn default_true() -> bool {
    true
}
fn default_batch() -> usize {
    64
}
fn default_runs_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScorerConfig {
    /// Add-one unigram model fit on a corpus file, one utterance per line.
    Unigram { corpus: PathBuf },
    /// Every token gets the same log-probability.
    Uniform { token_logprob: f64 },
    Remote {
        #[serde(default)]
        url: Option<String>,
        #[serde(default = "default_batch")]
        batch_size: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ParaphraserConfig {
    Identity,
    /// `from => to` phrase table.
    Rules {
        table: PathBuf,
    },
    Remote {
        #[serde(default)]
        url: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TrainerConfig {
    /// No training; every round filters with the grammar chart parser.
    Grammar,
    /// External executable run as `<command> <args>... --train <jsonl> --out <model-ref>`.
    Hook {
        command: PathBuf,
        #[serde(default)]
        args: Vec<String>,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterModeConfig {
    #[default]
    Template,
    Denotation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default)]
    pub mode: FilterModeConfig,
    /// Depth bound for the chart parser; defaults to the synthesis depth.
    #[serde(default)]
    pub max_depth: Option<u32>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            mode: FilterModeConfig::Template,
            max_depth: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSection {
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

impl Default for SelectionSection {
    fn default() -> Self {
        SelectionSection {
            top_k: DEFAULT_TOP_K,
            delta: DEFAULT_DELTA,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_val_size")]
    pub val_size: usize,
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection {
            alpha: DEFAULT_ALPHA,
            val_size: DEFAULT_VAL_SIZE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSection {
    #[serde(default = "default_iterations")]
    pub iterations: u32,
    #[serde(default = "default_beam")]
    pub beam: usize,
    #[serde(default = "default_true")]
    pub wh_prefixes: bool,
    #[serde(default = "default_true")]
    pub two_stage: bool,
}

impl Default for LoopSection {
    fn default() -> Self {
        LoopSection {
            iterations: DEFAULT_ITERATIONS,
            beam: DEFAULT_BEAM,
            wh_prefixes: true,
            two_stage: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineFile {
    pub grammar: PathBuf,
    pub database: PathBuf,
    #[serde(default = "default_max_depth")]
    pub max_depth: u32,
    #[serde(default = "default_max_examples")]
    pub max_examples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Constraint rules such as `distinct-entities:paper.author:2`.
    #[serde(default)]
    pub constraints: Vec<String>,
    pub scorer: ScorerConfig,
    pub paraphraser: ParaphraserConfig,
    #[serde(default = "default_trainer")]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub selection: SelectionSection,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default, rename = "loop")]
    pub loop_: LoopSection,
    #[serde(default)]
    pub empty_denotation_policy: PolicyConfig,
    #[serde(default = "default_runs_dir")]
    pub runs_dir: PathBuf,
}

fn default_trainer() -> TrainerConfig {
    TrainerConfig::Grammar
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyConfig {
    Match,
    #[default]
    Flag,
}

impl From<PolicyConfig> for EmptyDenotationPolicy {
    fn from(p: PolicyConfig) -> Self {
        match p {
            PolicyConfig::Match => EmptyDenotationPolicy::Match,
            PolicyConfig::Flag => EmptyDenotationPolicy::Flag,
        }
    }
}

/// `a.b[2].c` style path from serde_path_to_error as a JSON pointer.
fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

impl PipelineFile {
    pub fn parse(text: &str, path: &Path) -> Result<PipelineFile> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: PipelineFile = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            pointer: json_pointer(e.path()),
            message: e.inner().to_string(),
        })?;
        cfg.check(path)?;
        Ok(cfg)
    }

    fn check(&self, path: &Path) -> Result<()> {
        let bad = |pointer: &str, message: &str| {
            Err(Error::Config {
                path: path.to_path_buf(),
                pointer: pointer.to_string(),
                message: message.to_string(),
            })
        };
        if self.max_depth < 1 {
            return bad("/max_depth", "must be at least 1");
        }
        if self.selection.top_k < 1 {
            return bad("/selection/top_k", "must be at least 1");
        }
        if !(self.selection.delta >= 0.0 && self.selection.delta.is_finite()) {
            return bad("/selection/delta", "must be a finite value >= 0");
        }
        if !(self.sampling.alpha >= 0.0 && self.sampling.alpha.is_finite()) {
            return bad("/sampling/alpha", "must be a finite value >= 0");
        }
        if self.sampling.val_size < 1 {
            return bad("/sampling/val_size", "must be at least 1");
        }
        if self.loop_.iterations < 1 {
            return bad("/loop/iterations", "must be at least 1");
        }
        if self.loop_.beam < 1 {
            return bad("/loop/beam", "must be at least 1");
        }
        if self.filter.max_depth == Some(0) {
            return bad("/filter/max_depth", "must be at least 1");
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if let Err(e) = c.parse::<synthparse_core::synthesis::ConstraintRule>() {
                return bad(&format!("/constraints/{i}"), &e.to_string());
            }
        }
        if let ScorerConfig::Remote { url, .. } = &self.scorer {
            if adapter_url(url.as_deref()).is_none() {
                return bad("/scorer/url", "remote scorer needs a url (or SYNTHPARSE_ADAPTER_URL)");
            }
        }
        if let ParaphraserConfig::Remote { url } = &self.paraphraser {
            if adapter_url(url.as_deref()).is_none() {
                return bad(
                    "/paraphraser/url",
                    "remote paraphraser needs a url (or SYNTHPARSE_ADAPTER_URL)",
                );
            }
        }
        Ok(())
    }

    /// Makes every path absolute against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        use crate::io::resolve;
        self.grammar = resolve(base, &self.grammar);
        self.database = resolve(base, &self.database);
        self.runs_dir = resolve(base, &self.runs_dir);
        if let ScorerConfig::Unigram { corpus } = &mut self.scorer {
            *corpus = resolve(base, corpus);
        }
        if let ParaphraserConfig::Rules { table } = &mut self.paraphraser {
            *table = resolve(base, table);
        }
        if let TrainerConfig::Hook { command, .. } = &mut self.trainer {
            if command.components().count() > 1 {
                *command = resolve(base, command);
            }
        }
    }
}

/// Loads a config file, returning it with paths resolved alongside a
/// snapshot of the effective settings as written (defaults filled in).
pub fn load_config(path: &Path) -> Result<(PipelineFile, serde_json::Value)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = PipelineFile::parse(&text, path)?;
    let snapshot = serde_json::to_value(&cfg).expect("config always serializes");
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    cfg.resolve_paths(base);
    Ok((cfg, snapshot))
}
