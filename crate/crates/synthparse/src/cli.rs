//! Command-line interface. Exit codes: 0 success, 1 runtime error, 2 usage
//! or configuration error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::builder::TypedValueParser;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use synthparse_core::executor::execute;
use synthparse_core::metrics::{report, Accuracy, EmptyDenotationPolicy, MetricReport};
use synthparse_core::paraphrase::{filter_paraphrases, generate_paraphrases, FilterMode, GrammarFilter};
use synthparse_core::selection::{
    sample_validation, score_dataset, select_top_k, SamplingConfig, SelectionConfig, DEFAULT_ALPHA, DEFAULT_DELTA,
    DEFAULT_TOP_K, DEFAULT_VAL_SIZE,
};
use synthparse_core::synthesis::{
    apply_constraints, bucket_by_depth, enumerate_with, EnumerateConfig, DEFAULT_MAX_EXAMPLES,
};
use synthparse_core::DatasetName;

use crate::config::{load_config, ParaphraserConfig, ScorerConfig};
use crate::error::{Error, Result};
use crate::io::{read_dataset, read_grammar, write_atomic, write_dataset};
use crate::manifest::{BucketSummary, RunDir, RunManifest};
use crate::pipeline::{build_paraphraser, build_scorer, load_inputs, parse_constraints, run_pipeline};

#[derive(Debug, Parser)]
#[command(
    name = "synthparse",
    version,
    about = "Grammar-driven data synthesis for zero-shot semantic parsers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Enumerate canonical examples from a grammar.
    Synth(SynthArgs),
    /// Score examples and keep the most natural template groups.
    Select(SelectArgs),
    /// Generate paraphrase candidates.
    Paraphrase(ParaphraseArgs),
    /// Split candidates into accepted and rejected with the grammar parser.
    Filter(FilterArgs),
    /// Run the full configured pipeline into a fresh run directory.
    Pipeline(PipelineArgs),
    /// Sample a validation set with weight p_LM^alpha.
    SampleDev(SampleArgs),
    /// Compare a candidate dataset against a reference.
    Metrics(MetricsArgs),
    /// Grammar utilities.
    #[command(subcommand)]
    Grammar(GrammarCommand),
}

#[derive(Debug, Subcommand)]
pub enum GrammarCommand {
    /// Load a grammar and print its diagnostics.
    Check { path: PathBuf },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub grammar: PathBuf,
    /// Database to execute the enumerated programs against (reported in the manifest).
    #[arg(long)]
    pub db: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub max_depth: u32,
    #[arg(long, default_value_t = DEFAULT_MAX_EXAMPLES)]
    pub max_examples: usize,
    /// Constraint such as `distinct-entities:paper.author:2`; repeatable.
    #[arg(long = "constraint")]
    pub constraints: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScorerKind {
    Unigram,
    Uniform,
    Remote,
}

#[derive(Debug, Args)]
pub struct ScorerArgs {
    /// Scorer to use; when omitted, existing scores in the input are used.
    #[arg(long)]
    pub scorer: Option<ScorerKind>,
    /// Corpus for the unigram scorer, one utterance per line.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub token_logprob: Option<f64>,
    #[arg(long)]
    pub adapter_url: Option<String>,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

impl ScorerArgs {
    fn config(&self) -> Result<Option<ScorerConfig>> {
        Ok(match self.scorer {
            None => None,
            Some(ScorerKind::Unigram) => Some(ScorerConfig::Unigram {
                corpus: self
                    .corpus
                    .clone()
                    .ok_or_else(|| Error::Usage("--scorer unigram needs --corpus".into()))?,
            }),
            Some(ScorerKind::Uniform) => Some(ScorerConfig::Uniform {
                token_logprob: self
                    .token_logprob
                    .ok_or_else(|| Error::Usage("--scorer uniform needs --token-logprob".into()))?,
            }),
            Some(ScorerKind::Remote) => Some(ScorerConfig::Remote {
                url: self.adapter_url.clone(),
                batch_size: self.batch_size,
            }),
        })
    }
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP_K, value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
    pub top_k: usize,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    #[command(flatten)]
    pub scorer: ScorerArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ParaphraserKind {
    Identity,
    Rules,
    Remote,
}

#[derive(Debug, Args)]
pub struct ParaphraseArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "identity")]
    pub paraphraser: ParaphraserKind,
    /// Phrase table for `--paraphraser rules`.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub adapter_url: Option<String>,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
    pub beam: usize,
    /// Do not force WH-question prefixes on half the beam.
    #[arg(long)]
    pub no_wh_prefixes: bool,
    /// Iteration number recorded in provenance.
    #[arg(long, default_value_t = 1)]
    pub iteration: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FilterModeArg {
    Template,
    Denotation,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub grammar: PathBuf,
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u32).range(1..))]
    pub max_depth: u32,
    #[arg(long, default_value = "template")]
    pub mode: FilterModeArg,
    /// Database for `--mode denotation`.
    #[arg(long)]
    pub db: Option<PathBuf>,
    #[arg(long)]
    pub accepted: PathBuf,
    #[arg(long)]
    pub rejected: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    pub config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use this directory instead of a fresh one under the config's runs_dir.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the remaining training examples.
    #[arg(long)]
    pub rest: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_VAL_SIZE, value_parser = clap::value_parser!(u64).range(1..).map(|v| v as usize))]
    pub val_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub scorer: ScorerArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Match,
    Flag,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub candidate: PathBuf,
    #[arg(long)]
    pub db: Option<PathBuf>,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[arg(long, default_value = "flag")]
    pub empty_denotation_policy: PolicyArg,
    #[arg(long, default_value = "report.json")]
    pub report: PathBuf,
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn usage_if_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Usage(format!("--{name} must be a finite value >= 0")))
    }
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut m = RunManifest::new(
        "synth",
        serde_json::json!({
            "max_depth": a.max_depth,
            "max_examples": a.max_examples,
            "constraints": a.constraints,
        }),
    );
    let constraints = parse_constraints(&a.constraints)?;
    let (grammar, db) = load_inputs(&a.grammar, a.db.as_deref(), &mut m)?;
    let (enumerated, stats) = m.time("enumerate", |_| {
        enumerate_with(
            &grammar,
            EnumerateConfig {
                max_depth: a.max_depth,
                max_examples: a.max_examples,
            },
        )
        .map_err(Error::runtime)
    })?;
    m.counts.enumerated = Some(enumerated.len());
    let kept = apply_constraints(&enumerated, &constraints, &grammar).map_err(|e| Error::Usage(e.to_string()))?;
    m.counts.constrained = Some(kept.len());
    let depths: std::collections::BTreeMap<String, usize> = bucket_by_depth(&kept)
        .iter()
        .map(|(d, b)| (d.to_string(), b.len()))
        .collect();
    m.extra.insert("bucket_sizes".into(), serde_json::json!(depths));
    m.extra.insert("duplicates".into(), serde_json::json!(stats.duplicates));
    if let Some(db) = &db {
        let (mut ok, mut empty, mut errors) = (0usize, 0usize, 0usize);
        for e in &kept {
            match execute(&e.program, db) {
                Ok(d) if d.is_empty() => empty += 1,
                Ok(_) => ok += 1,
                Err(_) => errors += 1,
            }
        }
        m.extra.insert(
            "execution".into(),
            serde_json::json!({"nonempty": ok, "empty": empty, "errors": errors}),
        );
    }
    write_dataset(&a.out, &kept)?;
    m.status = "ok".into();
    m.write(&manifest_path(&a.out))?;
    println!("wrote {} examples to {}", kept.len(), a.out.display());
    Ok(())
}

fn cmd_select(a: &SelectArgs) -> Result<()> {
    usage_if_negative("delta", a.delta)?;
    let mut m = RunManifest::new("select", serde_json::json!({"top_k": a.top_k, "delta": a.delta}));
    let (input, digest) = read_dataset(&a.input, DatasetName::Canonical)?;
    m.input("dataset", &digest);
    let scored = match a.scorer.config()? {
        Some(cfg) => {
            m.config["scorer"] = serde_json::to_value(&cfg).unwrap_or_default();
            let scorer = build_scorer(&cfg, Some(&mut m))?;
            m.time("score", |_| score_dataset(&input, scorer.as_ref(), a.scorer.batch_size))
                .map_err(Error::runtime)?
        }
        None => input,
    };
    let cfg = SelectionConfig {
        top_k: a.top_k,
        delta: a.delta,
    };
    let (selected, reports) = select_top_k(&bucket_by_depth(&scored), &cfg).map_err(|e| match e {
        synthparse_core::selection::SelectionError::Unscored { id } => {
            Error::Usage(format!("example `{id}` has no score; pass --scorer to score the input"))
        }
        other => Error::runtime(other),
    })?;
    m.counts.selected = Some(selected.len());
    m.buckets = reports.iter().map(BucketSummary::from).collect();
    write_dataset(&a.out, &selected)?;
    m.status = "ok".into();
    m.write(&manifest_path(&a.out))?;
    println!(
        "selected {} of {} examples into {}",
        selected.len(),
        scored.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_paraphrase(a: &ParaphraseArgs) -> Result<()> {
    let cfg = match a.paraphraser {
        ParaphraserKind::Identity => ParaphraserConfig::Identity,
        ParaphraserKind::Rules => ParaphraserConfig::Rules {
            table: a
                .rules
                .clone()
                .ok_or_else(|| Error::Usage("--paraphraser rules needs --rules".into()))?,
        },
        ParaphraserKind::Remote => ParaphraserConfig::Remote {
            url: a.adapter_url.clone(),
        },
    };
    let mut m = RunManifest::new(
        "paraphrase",
        serde_json::json!({"paraphraser": cfg, "beam": a.beam, "wh_prefixes": !a.no_wh_prefixes}),
    );
    let (input, digest) = read_dataset(&a.input, DatasetName::Canonical)?;
    m.input("dataset", &digest);
    let p = build_paraphraser(&cfg, Some(&mut m))?;
    let out =
        generate_paraphrases(&input, p.as_ref(), a.beam, !a.no_wh_prefixes, a.iteration).map_err(Error::runtime)?;
    m.counts.paraphrased = Some(out.len());
    write_dataset(&a.out, &out)?;
    m.status = "ok".into();
    m.write(&manifest_path(&a.out))?;
    println!("wrote {} candidates to {}", out.len(), a.out.display());
    Ok(())
}

fn cmd_filter(a: &FilterArgs) -> Result<()> {
    let mut m = RunManifest::new(
        "filter",
        serde_json::json!({"max_depth": a.max_depth, "mode": format!("{:?}", a.mode).to_lowercase()}),
    );
    let (grammar, db) = load_inputs(&a.grammar, a.db.as_deref(), &mut m)?;
    let mode = match (a.mode, db) {
        (FilterModeArg::Template, _) => FilterMode::Template,
        (FilterModeArg::Denotation, Some(db)) => FilterMode::Denotation(Arc::new(db)),
        (FilterModeArg::Denotation, None) => return Err(Error::Usage("--mode denotation needs --db".into())),
    };
    let (cands, digest) = read_dataset(&a.input, DatasetName::Paraphrased)?;
    m.input("candidates", &digest);
    let parser = GrammarFilter::new(Arc::new(grammar), a.max_depth);
    let (accepted, rejected) = filter_paraphrases(&cands, &parser, &mode);
    m.counts.accepted = Some(accepted.len());
    m.counts.rejected = Some(rejected.len());
    let total = accepted.len() + rejected.len();
    m.acceptance_rate = (total > 0).then(|| accepted.len() as f64 / total as f64);
    write_dataset(&a.accepted, &accepted)?;
    write_dataset(&a.rejected, &rejected)?;
    m.status = "ok".into();
    m.write(&manifest_path(&a.accepted))?;
    println!("accepted {} of {} candidates", accepted.len(), total);
    Ok(())
}

fn cmd_pipeline(a: &PipelineArgs) -> Result<()> {
    let (mut cfg, mut snapshot) = load_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
        snapshot["seed"] = serde_json::json!(seed);
    }
    let run = match &a.run_dir {
        Some(dir) => RunDir::lock(dir.clone())?,
        None => RunDir::create(&cfg.runs_dir, cfg.seed)?,
    };
    let out = run_pipeline(&cfg, snapshot, &run)?;
    println!(
        "run complete: {} (seed {} examples, D_par {}, D_val {})",
        run.path().display(),
        out.seed.len(),
        out.d_par.len(),
        out.d_val.as_ref().map_or(0, |d| d.len())
    );
    Ok(())
}

fn cmd_sample(a: &SampleArgs) -> Result<()> {
    usage_if_negative("alpha", a.alpha)?;
    let mut m = RunManifest::new(
        "sample-dev",
        serde_json::json!({"alpha": a.alpha, "val_size": a.val_size, "seed": a.seed}),
    );
    m.seed = Some(a.seed);
    let (input, digest) = read_dataset(&a.input, DatasetName::Paraphrased)?;
    m.input("dataset", &digest);
    let scored = match a.scorer.config()? {
        Some(cfg) => {
            let scorer = build_scorer(&cfg, Some(&mut m))?;
            score_dataset(&input, scorer.as_ref(), a.scorer.batch_size).map_err(Error::runtime)?
        }
        None => input,
    };
    let cfg = SamplingConfig {
        alpha: a.alpha,
        size: a.val_size,
        seed: a.seed,
    };
    let (val, rest) = sample_validation(&scored, &cfg).map_err(|e| match e {
        synthparse_core::selection::SelectionError::Unscored { id } => {
            Error::Usage(format!("example `{id}` has no score; pass --scorer to score the input"))
        }
        synthparse_core::selection::SelectionError::TooSmall { .. } => Error::Usage(e.to_string()),
        other => Error::runtime(other),
    })?;
    m.counts.sampled = Some(val.len());
    write_dataset(&a.out, &val)?;
    if let Some(rest_path) = &a.rest {
        write_dataset(rest_path, &rest)?;
    }
    m.status = "ok".into();
    m.write(&manifest_path(&a.out))?;
    println!(
        "sampled {} of {} examples into {}",
        val.len(),
        scored.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct AccuracyJson {
    correct: usize,
    total: usize,
    pred_errors: usize,
    gold_errors: usize,
    empty_gold: usize,
}

impl From<&Accuracy> for AccuracyJson {
    fn from(a: &Accuracy) -> Self {
        AccuracyJson {
            correct: a.correct,
            total: a.total,
            pred_errors: a.pred_errors,
            gold_errors: a.gold_errors,
            empty_gold: a.empty_gold,
        }
    }
}

/// The metrics report as written to `report.json`.
#[derive(Serialize)]
pub struct ReportJson {
    perplexity: Option<f64>,
    corpus_perplexity: Option<f64>,
    token_f1_mean: Option<f64>,
    kendall_tau_mean: Option<f64>,
    logical_coverage: Option<f64>,
    denotation_accuracy: Option<f64>,
    empty_denotation_policy: &'static str,
    counts: serde_json::Value,
    accuracy: Option<AccuracyJson>,
}

impl ReportJson {
    pub fn new(r: &MetricReport, policy: EmptyDenotationPolicy) -> Self {
        ReportJson {
            perplexity: r.perplexity,
            corpus_perplexity: r.corpus_perplexity,
            token_f1_mean: r.token_f1_mean,
            kendall_tau_mean: r.kendall_tau_mean,
            logical_coverage: r.logical_coverage,
            denotation_accuracy: r.denotation_accuracy,
            empty_denotation_policy: policy.as_str(),
            counts: serde_json::json!({
                "reference": r.reference_count,
                "candidate": r.candidate_count,
                "aligned_pairs": r.aligned_pairs,
                "tau_excluded": r.tau_excluded,
            }),
            accuracy: r.accuracy.as_ref().map(AccuracyJson::from),
        }
    }
}

fn cmd_metrics(a: &MetricsArgs) -> Result<()> {
    let (reference, _) = read_dataset(&a.reference, DatasetName::Natural)?;
    let (candidate, _) = read_dataset(&a.candidate, DatasetName::Paraphrased)?;
    let db = match &a.db {
        Some(p) => Some(crate::io::read_database(p)?.0),
        None => None,
    };
    let scorer = match a.scorer.config()? {
        Some(cfg) => Some(build_scorer(&cfg, None)?),
        None => None,
    };
    let policy = match a.empty_denotation_policy {
        PolicyArg::Match => EmptyDenotationPolicy::Match,
        PolicyArg::Flag => EmptyDenotationPolicy::Flag,
    };
    let r = report(&reference, &candidate, scorer.as_deref(), db.as_ref(), policy).map_err(Error::runtime)?;
    let bad = r.out_of_range();
    if !bad.is_empty() {
        return Err(Error::runtime(format!(
            "metric values out of range: {}",
            bad.join(", ")
        )));
    }
    let mut json = serde_json::to_string_pretty(&ReportJson::new(&r, policy)).expect("report serializes");
    json.push('\n');
    print!("{json}");
    write_atomic(&a.report, json.as_bytes())
}

fn cmd_grammar_check(path: &Path) -> Result<()> {
    let (g, _) = read_grammar(path)?;
    let diags = g.validate();
    println!(
        "{}: {} categories, {} productions",
        path.display(),
        g.categories().len(),
        g.productions().len()
    );
    for d in &diags {
        println!("{d}");
    }
    if diags.is_empty() {
        println!("clean");
    }
    Ok(())
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Select(a) => cmd_select(a),
        Command::Paraphrase(a) => cmd_paraphrase(a),
        Command::Filter(a) => cmd_filter(a),
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::SampleDev(a) => cmd_sample(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Grammar(GrammarCommand::Check { path }) => cmd_grammar_check(path),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
