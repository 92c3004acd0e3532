//! End-to-end run: synthesize, constrain, score, select, then the two-stage
//! paraphrase loop, persisting every intermediate dataset.

use std::path::Path;
use std::sync::Arc;

use synthparse_core::paraphrase::{
    run_two_stage, FilterMode, GrammarFilter, GrammarTrainer, IdentityParaphraser, IterationRecord, Paraphraser,
    PipelineConfig, RuleTableParaphraser, StageError, Trainer,
};
use synthparse_core::scorer::{Scorer, UniformScorer, UnigramStub};
use synthparse_core::selection::{score_dataset, select_top_k, SamplingConfig, SelectionConfig};
use synthparse_core::synthesis::{apply_constraints, bucket_by_depth, enumerate_with, ConstraintRule, EnumerateConfig};
use synthparse_core::{Database, Dataset, Grammar};

use crate::config::{FilterModeConfig, ParaphraserConfig, PipelineFile, ScorerConfig, TrainerConfig};
use crate::error::{Error, Result};
use crate::hook::HookTrainer;
use crate::io::{read_corpus, read_database, read_grammar, read_input, write_dataset};
use crate::manifest::{BucketSummary, IterationSummary, RunDir, RunManifest, MANIFEST_FILE};
use crate::remote::{adapter_url, RemoteParaphraser, RemoteScorer};

/// Builds the configured scorer, recording any corpus it reads.
pub fn build_scorer(cfg: &ScorerConfig, manifest: Option<&mut RunManifest>) -> Result<Box<dyn Scorer>> {
    Ok(match cfg {
        ScorerConfig::Unigram { corpus } => {
            let (utts, input) = read_corpus(corpus)?;
            if let Some(m) = manifest {
                m.input("corpus", &input);
            }
            Box::new(UnigramStub::fit(&utts).map_err(|e| Error::load(corpus, e))?)
        }
        ScorerConfig::Uniform { token_logprob } => Box::new(UniformScorer {
            token_logprob: *token_logprob,
        }),
        ScorerConfig::Remote { url, batch_size } => {
            let url = adapter_url(url.as_deref())
                .ok_or_else(|| Error::Usage("remote scorer needs a URL or SYNTHPARSE_ADAPTER_URL".into()))?;
            Box::new(RemoteScorer::new(url, *batch_size))
        }
    })
}

pub fn build_paraphraser(cfg: &ParaphraserConfig, manifest: Option<&mut RunManifest>) -> Result<Box<dyn Paraphraser>> {
    Ok(match cfg {
        ParaphraserConfig::Identity => Box::new(IdentityParaphraser),
        ParaphraserConfig::Rules { table } => {
            let input = read_input(table)?;
            if let Some(m) = manifest {
                m.input("rules", &input);
            }
            Box::new(RuleTableParaphraser::parse(&input.text).map_err(|e| Error::load(table, e))?)
        }
        ParaphraserConfig::Remote { url } => {
            let url = adapter_url(url.as_deref())
                .ok_or_else(|| Error::Usage("remote paraphraser needs a URL or SYNTHPARSE_ADAPTER_URL".into()))?;
            Box::new(RemoteParaphraser::new(url))
        }
    })
}

pub fn parse_constraints(rules: &[String]) -> Result<Vec<ConstraintRule>> {
    rules
        .iter()
        .map(|r| {
            r.parse()
                .map_err(|e: synthparse_core::synthesis::SynthesisError| Error::Usage(e.to_string()))
        })
        .collect()
}

fn filter_mode(cfg: FilterModeConfig, db: &Arc<Database>) -> FilterMode {
    match cfg {
        FilterModeConfig::Template => FilterMode::Template,
        FilterModeConfig::Denotation => FilterMode::Denotation(db.clone()),
    }
}

fn persist_iterations(run: &RunDir, records: &[IterationRecord]) -> Result<()> {
    for r in records {
        let dir = run.join(format!("stage{}/iter{}", r.stage, r.iteration));
        write_dataset(&dir.join("accepted.jsonl"), &r.accepted)?;
        write_dataset(&dir.join("rejected.jsonl"), &r.rejected)?;
    }
    Ok(())
}

fn tally(manifest: &mut RunManifest, records: &[IterationRecord]) {
    let candidates: usize = records.iter().map(|r| r.candidates).sum();
    let accepted: usize = records.iter().map(|r| r.accepted.len()).sum();
    let rejected: usize = records.iter().map(|r| r.rejected.len()).sum();
    manifest.counts.paraphrased = Some(candidates);
    manifest.counts.accepted = Some(accepted);
    manifest.counts.rejected = Some(rejected);
    manifest.acceptance_rate = (accepted + rejected > 0).then(|| accepted as f64 / (accepted + rejected) as f64);
    manifest.iterations = records.iter().map(IterationSummary::from).collect();
}

/// What a finished run produced.
pub struct PipelineOutput {
    pub seed: Dataset,
    pub d_par: Dataset,
    pub d_val: Option<Dataset>,
    pub manifest: RunManifest,
}

/// Runs the configured pipeline inside `run`. The manifest is written
/// whether or not the run succeeds; failures also leave a `FAILED` marker.
pub fn run_pipeline(cfg: &PipelineFile, snapshot: serde_json::Value, run: &RunDir) -> Result<PipelineOutput> {
    let mut manifest = RunManifest::new("pipeline", snapshot);
    manifest.seed = Some(cfg.seed);
    let result = execute(cfg, run, &mut manifest);
    match &result {
        Ok(_) => manifest.status = "ok".into(),
        Err(e) => {
            manifest.status = "failed".into();
            manifest.error = Some(e.to_string());
            run.mark_failed(&e.to_string())?;
        }
    }
    manifest.write(&run.join(MANIFEST_FILE))?;
    result.map(|(seed, d_par, d_val)| PipelineOutput {
        seed,
        d_par,
        d_val,
        manifest,
    })
}

type Produced = (Dataset, Dataset, Option<Dataset>);

fn execute(cfg: &PipelineFile, run: &RunDir, manifest: &mut RunManifest) -> Result<Produced> {
    let (grammar, g_in) = read_grammar(&cfg.grammar)?;
    manifest.input("grammar", &g_in);
    let (db, db_in) = read_database(&cfg.database)?;
    manifest.input("database", &db_in);
    let db = Arc::new(db);
    let diagnostics: Vec<String> = grammar.validate().iter().map(|d| d.to_string()).collect();
    if !diagnostics.is_empty() {
        manifest
            .extra
            .insert("grammar_diagnostics".into(), serde_json::json!(diagnostics));
    }
    let grammar = Arc::new(grammar);
    let constraints = parse_constraints(&cfg.constraints)?;
    let scorer = build_scorer(&cfg.scorer, Some(manifest))?;
    let paraphraser = build_paraphraser(&cfg.paraphraser, Some(manifest))?;

    let enumerated = manifest.time("enumerate", |_| {
        enumerate_with(
            &grammar,
            EnumerateConfig {
                max_depth: cfg.max_depth,
                max_examples: cfg.max_examples,
            },
        )
        .map(|(d, _)| d)
        .map_err(Error::runtime)
    })?;
    manifest.counts.enumerated = Some(enumerated.len());
    write_dataset(&run.join("enumerated.jsonl"), &enumerated)?;

    let constrained =
        apply_constraints(&enumerated, &constraints, &grammar).map_err(|e| Error::Usage(e.to_string()))?;
    manifest.counts.constrained = Some(constrained.len());
    write_dataset(&run.join("constrained.jsonl"), &constrained)?;

    let selection = SelectionConfig {
        top_k: cfg.selection.top_k,
        delta: cfg.selection.delta,
    };
    let (seed, reports) = manifest.time("select", |_| -> Result<_> {
        let scored = score_dataset(&constrained, scorer.as_ref(), 64).map_err(Error::runtime)?;
        select_top_k(&bucket_by_depth(&scored), &selection).map_err(Error::runtime)
    })?;
    manifest.counts.selected = Some(seed.len());
    manifest.buckets = reports.iter().map(BucketSummary::from).collect();
    write_dataset(&run.join("seed.jsonl"), &seed)?;

    let filter = GrammarFilter::new(grammar.clone(), cfg.filter.max_depth.unwrap_or(cfg.max_depth));
    let mut trainer: Box<dyn Trainer> = match &cfg.trainer {
        TrainerConfig::Grammar => Box::new(GrammarTrainer { filter }),
        TrainerConfig::Hook { command, args } => Box::new(HookTrainer {
            command: command.clone(),
            args: args.clone(),
            work_dir: run.join("models"),
            filter,
        }),
    };
    let pcfg = PipelineConfig {
        iterations: cfg.loop_.iterations,
        beam: cfg.loop_.beam,
        wh_prefixes: cfg.loop_.wh_prefixes,
        two_stage: cfg.loop_.two_stage,
        filter_mode: filter_mode(cfg.filter.mode, &db),
        selection,
        sampling: SamplingConfig {
            alpha: cfg.sampling.alpha,
            size: cfg.sampling.val_size,
            seed: cfg.seed,
        },
        score_batch_size: 64,
    };
    let outcome = manifest.time("paraphrase", |_| {
        run_two_stage(&seed, &pcfg, paraphraser.as_ref(), trainer.as_mut(), scorer.as_ref())
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => return Err(persist_failure(run, manifest, e)),
    };

    let mut records: Vec<IterationRecord> = outcome.stage_one.iterations.clone();
    write_dataset(&run.join("stage1/d_par.jsonl"), &outcome.stage_one.dataset)?;
    if let Some(two) = &outcome.stage_two {
        records.extend(two.iterations.iter().cloned());
        write_dataset(&run.join("stage2/d_par.jsonl"), &two.dataset)?;
    }
    persist_iterations(run, &records)?;
    tally(manifest, &records);
    if let Some(r) = &outcome.stage_one.seed_model_ref {
        manifest.extra.insert("seed_model_ref".into(), serde_json::json!(r));
    }
    if let Some(val) = &outcome.validation {
        manifest.counts.sampled = Some(val.len());
        write_dataset(&run.join("d_val.jsonl"), val)?;
    }
    let d_par = outcome.dataset().clone();
    write_dataset(&run.join("d_par.jsonl"), &d_par)?;
    Ok((seed, d_par, outcome.validation))
}

fn persist_failure(run: &RunDir, manifest: &mut RunManifest, e: StageError) -> Error {
    let write = || -> Result<()> {
        persist_iterations(run, &e.iterations)?;
        write_dataset(&run.join(format!("stage{}/d_par.partial.jsonl", e.stage)), &e.dataset)
    };
    if let Err(io) = write() {
        return io;
    }
    tally(manifest, &e.iterations);
    Error::runtime(e)
}

/// Loads grammar and database for commands that only need those.
pub fn load_inputs(
    grammar: &Path,
    db: Option<&Path>,
    manifest: &mut RunManifest,
) -> Result<(Grammar, Option<Database>)> {
    let (g, g_in) = read_grammar(grammar)?;
    manifest.input("grammar", &g_in);
    let db = match db {
        Some(p) => {
            let (db, input) = read_database(p)?;
            manifest.input("database", &input);
            Some(db)
        }
        None => None,
    };
    Ok((g, db))
}
