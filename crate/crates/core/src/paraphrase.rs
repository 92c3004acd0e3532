//! Paraphrase generation, parser-based filtering and the iterative
//! paraphrase → filter → train loop.
//!
//! The paraphraser, the filter parser and the trainer are traits; the
//! built-in implementations are deterministic stand-ins (identity and
//! rule-table paraphrasers, a grammar chart-parser filter).

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use crate::dataset::{Dataset, DatasetName, Example, Provenance};
use crate::executor::{denotation_equal, execute, Database};
use crate::grammar::{ChartParser, Grammar};
use crate::program::Program;
use crate::scorer::Scorer;
use crate::selection::{sample_validation, score_dataset, SamplingConfig, SelectionConfig, SelectionError};

pub const DEFAULT_BEAM: usize = 10;
pub const DEFAULT_ITERATIONS: u32 = 2;
pub const DEFAULT_WH_PREFIXES: [&str; 6] = ["what", "which", "who", "when", "where", "how many"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParaphraseError {
    Transport(String),
    Protocol(String),
}

impl fmt::Display for ParaphraseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParaphraseError::Transport(m) => write!(f, "paraphraser transport failure: {m}"),
            ParaphraseError::Protocol(m) => write!(f, "paraphraser protocol violation: {m}"),
        }
    }
}

impl core::error::Error for ParaphraseError {}

pub trait Paraphraser {
    /// At most `beam` distinct rewrites of `utterance`. With `wh_prefixes`,
    /// `beam / 2` of them start with one of the prefixes.
    fn generate(
        &self,
        utterance: &[String],
        beam: usize,
        wh_prefixes: Option<&[String]>,
    ) -> Result<Vec<Vec<String>>, ParaphraseError>;
}

impl<P: Paraphraser + ?Sized> Paraphraser for &P {
    fn generate(&self, u: &[String], beam: usize, wh: Option<&[String]>) -> Result<Vec<Vec<String>>, ParaphraseError> {
        (**self).generate(u, beam, wh)
    }
}

/// Returns the input unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityParaphraser;

impl Paraphraser for IdentityParaphraser {
    fn generate(
        &self,
        utterance: &[String],
        beam: usize,
        _: Option<&[String]>,
    ) -> Result<Vec<Vec<String>>, ParaphraseError> {
        Ok(if beam == 0 {
            Vec::new()
        } else {
            alloc::vec![utterance.to_vec()]
        })
    }
}

fn split_words(s: &str) -> Vec<String> {
    s.split_whitespace().map(|w| w.to_lowercase()).collect()
}

fn starts_with_any(u: &[String], prefixes: &[Vec<String>]) -> bool {
    prefixes.iter().any(|p| !p.is_empty() && u.starts_with(p))
}

/// Phrase substitution table, one `from => to` rule per line (`#` starts a
/// comment). Each candidate applies one rule at one position; a final
/// candidate applies every rule everywhere.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RuleTableParaphraser {
    rules: Vec<(Vec<String>, Vec<String>)>,
}

impl RuleTableParaphraser {
    pub fn new(rules: impl IntoIterator<Item = (String, String)>) -> Self {
        RuleTableParaphraser {
            rules: rules
                .into_iter()
                .map(|(a, b)| (split_words(&a), split_words(&b)))
                .filter(|(a, _)| !a.is_empty())
                .collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut rules = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((from, to)) = line.split_once("=>") else {
                return Err(format!("line {}: expected `from => to`", n + 1));
            };
            if from.trim().is_empty() {
                return Err(format!("line {}: empty left-hand side", n + 1));
            }
            rules.push((from.trim().to_string(), to.trim().to_string()));
        }
        Ok(RuleTableParaphraser::new(rules))
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    fn rewrites(&self, u: &[String]) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        for (from, to) in &self.rules {
            if from.len() > u.len() {
                continue;
            }
            for i in 0..=u.len() - from.len() {
                if u[i..i + from.len()] == from[..] {
                    let mut c = u[..i].to_vec();
                    c.extend(to.iter().cloned());
                    c.extend(u[i + from.len()..].iter().cloned());
                    out.push(c);
                }
            }
        }
        let mut all = u.to_vec();
        for (from, to) in &self.rules {
            let mut next = Vec::new();
            let mut i = 0;
            while i < all.len() {
                if all[i..].starts_with(from) {
                    next.extend(to.iter().cloned());
                    i += from.len();
                } else {
                    next.push(all[i].clone());
                    i += 1;
                }
            }
            all = next;
        }
        out.push(all);
        out
    }
}

impl Paraphraser for RuleTableParaphraser {
    fn generate(
        &self,
        utterance: &[String],
        beam: usize,
        wh_prefixes: Option<&[String]>,
    ) -> Result<Vec<Vec<String>>, ParaphraseError> {
        let mut bases: Vec<Vec<String>> = Vec::new();
        for c in self.rewrites(utterance) {
            if c != utterance && !c.is_empty() && !bases.contains(&c) {
                bases.push(c);
            }
        }
        let mut out: Vec<Vec<String>> = Vec::new();
        if let Some(prefixes) = wh_prefixes.filter(|p| !p.is_empty()) {
            let prefixes: Vec<Vec<String>> = prefixes.iter().map(|p| split_words(p)).collect();
            let forced = beam / 2;
            let mut pool = bases.clone();
            pool.push(utterance.to_vec());
            'fill: for base in &pool {
                for p in &prefixes {
                    if out.len() >= forced {
                        break 'fill;
                    }
                    let c = if starts_with_any(base, &prefixes) {
                        base.clone()
                    } else {
                        let mut c = p.clone();
                        c.extend(base.iter().cloned());
                        c
                    };
                    if !out.contains(&c) {
                        out.push(c);
                    }
                }
            }
        }
        for c in bases {
            if out.len() >= beam {
                break;
            }
            if !out.contains(&c) {
                out.push(c);
            }
        }
        if out.is_empty() && beam > 0 {
            out.push(utterance.to_vec());
        }
        Ok(out)
    }
}

/// Answer kinds used to choose WH prefixes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AnswerType {
    Number,
    Entity(String),
    Unknown,
}

/// Infers what a program returns from its outermost operation.
pub fn answer_type(program: &Program) -> AnswerType {
    match program {
        Program::Call { head, args } => match (head.as_str(), args.as_slice()) {
            ("listValue", [inner]) => answer_type(inner),
            ("count", _) => AnswerType::Number,
            ("filter" | "superlative" | "countSuperlative", [set, ..]) => answer_type(set),
            ("getProperty", [set, Program::Str(p)]) if p == "!type" => match set {
                Program::Call { head, args } if head == "singleton" => match args.as_slice() {
                    [Program::Type(t)] => AnswerType::Entity(t.clone()),
                    _ => AnswerType::Unknown,
                },
                _ => AnswerType::Unknown,
            },
            _ => AnswerType::Unknown,
        },
        Program::Entity { entity_type, .. } => AnswerType::Entity(entity_type.clone()),
        Program::Number(_) => AnswerType::Number,
        _ => AnswerType::Unknown,
    }
}

/// WH prefixes matching the program's answer type: `how many` for counts,
/// `when` for dates, `who` for people, `what`/`which` for other entities,
/// and the full default list when the type cannot be inferred.
pub fn wh_prefixes_for(program: &Program) -> Vec<String> {
    let pick: &[&str] = match answer_type(program) {
        AnswerType::Number => &["how many"],
        AnswerType::Entity(t) => match t.as_str() {
            "year" | "date" | "time" => &["when"],
            "author" | "person" | "people" => &["who"],
            "place" | "location" | "city" | "state" | "country" => &["where", "what", "which"],
            _ => &["what", "which"],
        },
        AnswerType::Unknown => &DEFAULT_WH_PREFIXES,
    };
    pick.iter().map(|s| s.to_string()).collect()
}

/// Paraphrases every example in `dataset`. Candidates inherit the source's
/// program, template and depth; echoes of the source are dropped.
pub fn generate_paraphrases<P: Paraphraser + ?Sized>(
    dataset: &Dataset,
    paraphraser: &P,
    beam: usize,
    wh_prefixes: bool,
    iteration: u32,
) -> Result<Dataset, ParaphraseError> {
    let mut out = Dataset::new(DatasetName::Paraphrased);
    for src in dataset {
        let prefixes = wh_prefixes.then(|| wh_prefixes_for(&src.program));
        let cands = paraphraser.generate(&src.utterance, beam.max(1), prefixes.as_deref())?;
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for cand in cands.into_iter().take(beam.max(1)) {
            let cand: Vec<String> = cand.iter().flat_map(|t| split_words(t)).collect();
            if cand.is_empty() || cand == src.utterance || !seen.insert(cand.join(" ")) {
                continue;
            }
            out.examples.push(Example {
                id: format!("{}~{}.{}", src.id, iteration, seen.len() - 1),
                utterance: cand,
                program: src.program.clone(),
                depth: src.depth,
                template: src.template.clone(),
                score: None,
                provenance: Provenance::Paraphrased {
                    source: root_source(src).to_string(),
                    iteration,
                },
            });
        }
    }
    Ok(out)
}

fn root_source(e: &Example) -> &str {
    match &e.provenance {
        Provenance::Paraphrased { source, .. } => source,
        _ => &e.id,
    }
}

pub trait FilterParser {
    /// The single best program, if any.
    fn predict(&self, utterance: &[String]) -> Option<Program>;

    /// All programs the parser considers; defaults to the best one.
    fn candidates(&self, utterance: &[String]) -> Vec<Program> {
        self.predict(utterance).into_iter().collect()
    }
}

/// Chart parser over the grammar. `predict` picks the shallowest
/// derivation, ties broken by rendering; `candidates` returns every parse.
#[derive(Clone, Debug)]
pub struct GrammarFilter {
    grammar: Arc<Grammar>,
    max_depth: u32,
}

impl GrammarFilter {
    pub fn new(grammar: Arc<Grammar>, max_depth: u32) -> Self {
        GrammarFilter { grammar, max_depth }
    }
}

impl FilterParser for GrammarFilter {
    fn predict(&self, utterance: &[String]) -> Option<Program> {
        let parses = ChartParser::new(&self.grammar, utterance).parse(self.max_depth);
        // parses are ordered by rendering, so min_by_key keeps the first
        parses.into_iter().min_by_key(|(_, d)| *d).map(|(p, _)| p)
    }

    fn candidates(&self, utterance: &[String]) -> Vec<Program> {
        ChartParser::new(&self.grammar, utterance)
            .parse(self.max_depth)
            .into_iter()
            .map(|(p, _)| p)
            .collect()
    }
}

/// What counts as the parser "recovering" the inherited program.
#[derive(Clone, Debug, Default)]
pub enum FilterMode {
    #[default]
    Template,
    /// Ablation: equal, successful denotations.
    Denotation(Arc<Database>),
}

fn recovers(mode: &FilterMode, parsed: &Program, cand: &Example) -> bool {
    match mode {
        FilterMode::Template => parsed.template_key().is_ok_and(|t| t == cand.template),
        FilterMode::Denotation(db) => match (execute(parsed, db), execute(&cand.program, db)) {
            (Ok(a), Ok(b)) => denotation_equal(&a, &b),
            _ => false,
        },
    }
}

/// Splits candidates into those whose utterance the parser maps back to the
/// inherited program and the rest. Order is preserved in both halves.
pub fn filter_paraphrases<F: FilterParser + ?Sized>(
    candidates: &Dataset,
    parser: &F,
    mode: &FilterMode,
) -> (Dataset, Dataset) {
    let mut accepted = Dataset::new(DatasetName::Paraphrased);
    let mut rejected = Dataset::new(DatasetName::Other);
    for c in candidates {
        let ok = parser.candidates(&c.utterance).iter().any(|p| recovers(mode, p, c));
        if ok {
            accepted.examples.push(c.clone());
        } else {
            rejected.examples.push(c.clone());
        }
    }
    (accepted, rejected)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainError(pub String);

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "trainer failed: {}", self.0)
    }
}

impl core::error::Error for TrainError {}

/// Which training call this is: stage 1 or 2, and the number of
/// paraphrase iterations already folded into the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Round {
    pub stage: u32,
    pub iteration: u32,
}

pub struct Trained {
    pub parser: Box<dyn FilterParser>,
    /// Opaque handle to the trained model, when the trainer produces one.
    pub model_ref: Option<String>,
}

pub trait Trainer {
    fn train(&mut self, data: &Dataset, round: Round) -> Result<Trained, TrainError>;
}

/// Ignores the data and always returns the grammar filter.
pub struct GrammarTrainer {
    pub filter: GrammarFilter,
}

impl Trainer for GrammarTrainer {
    fn train(&mut self, _: &Dataset, _: Round) -> Result<Trained, TrainError> {
        Ok(Trained {
            parser: Box::new(self.filter.clone()),
            model_ref: None,
        })
    }
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub iterations: u32,
    pub beam: usize,
    pub wh_prefixes: bool,
    /// Run the validation-sampling second stage.
    pub two_stage: bool,
    pub filter_mode: FilterMode,
    pub selection: SelectionConfig,
    pub sampling: SamplingConfig,
    pub score_batch_size: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            iterations: DEFAULT_ITERATIONS,
            beam: DEFAULT_BEAM,
            wh_prefixes: true,
            two_stage: true,
            filter_mode: FilterMode::Template,
            selection: SelectionConfig::default(),
            sampling: SamplingConfig::default(),
            score_batch_size: 64,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.iterations < 1 {
            return Err("iterations must be at least 1".into());
        }
        if self.beam < 1 {
            return Err("beam must be at least 1".into());
        }
        self.selection.validate().map_err(|e| e.to_string())?;
        self.sampling.validate().map_err(|e| e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub stage: u32,
    pub iteration: u32,
    pub candidates: usize,
    /// Candidates already present in the dataset or held out, skipped
    /// before filtering.
    pub duplicates: usize,
    pub accepted: Dataset,
    pub rejected: Dataset,
    pub dataset_size: usize,
    pub model_ref: Option<String>,
}

impl IterationRecord {
    /// accepted / (accepted + rejected); `None` when nothing was filtered.
    pub fn acceptance_rate(&self) -> Option<f64> {
        let total = self.accepted.len() + self.rejected.len();
        (total > 0).then(|| self.accepted.len() as f64 / total as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageOutcome {
    pub dataset: Dataset,
    pub iterations: Vec<IterationRecord>,
    /// Model reference of the initial parser, when one was trained here.
    pub seed_model_ref: Option<String>,
}

#[derive(Debug)]
pub enum StageErrorKind {
    Paraphrase(ParaphraseError),
    Train(TrainError),
    Sampling(SelectionError),
    Config(String),
}

impl fmt::Display for StageErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageErrorKind::Paraphrase(e) => write!(f, "{e}"),
            StageErrorKind::Train(e) => write!(f, "{e}"),
            StageErrorKind::Sampling(e) => write!(f, "{e}"),
            StageErrorKind::Config(m) => write!(f, "invalid pipeline configuration: {m}"),
        }
    }
}

/// A stage that stopped early, with everything completed before the
/// failure.
#[derive(Debug)]
pub struct StageError {
    pub stage: u32,
    pub kind: StageErrorKind,
    pub dataset: Dataset,
    pub iterations: Vec<IterationRecord>,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "stage {} stopped after {} completed iteration(s): {}",
            self.stage,
            self.iterations.len(),
            self.kind
        )
    }
}

impl core::error::Error for StageError {}

/// Where a stage's filter parser comes from.
pub enum InitialParser {
    /// Train on the seed before the first iteration.
    TrainOnSeed,
    Given(Box<dyn FilterParser>),
}

/// One paraphrasing stage. Each iteration paraphrases the seed examples,
/// drops candidates already in the dataset or in `held_out` (keys are
/// utterance text plus rendered program), filters the rest with the
/// current parser and appends the accepted ones; the trainer then
/// retrains on the grown dataset for the next iteration.
#[allow(clippy::too_many_arguments)]
pub fn run_stage<P: Paraphraser + ?Sized, T: Trainer + ?Sized>(
    seed: &Dataset,
    cfg: &PipelineConfig,
    stage: u32,
    paraphraser: &P,
    trainer: &mut T,
    initial: InitialParser,
    held_out: &BTreeSet<(String, String)>,
) -> Result<(StageOutcome, Box<dyn FilterParser>), StageError> {
    let seed_view: Vec<Example> = seed.iter().filter(|e| !held_out.contains(&e.key())).cloned().collect();
    let mut dataset = Dataset {
        name: DatasetName::Paraphrased,
        examples: seed_view,
    };
    let mut iterations: Vec<IterationRecord> = Vec::new();
    let fail = |kind, dataset: &Dataset, iterations: &Vec<IterationRecord>| StageError {
        stage,
        kind,
        dataset: dataset.clone(),
        iterations: iterations.clone(),
    };
    if let Err(m) = cfg.validate() {
        return Err(fail(StageErrorKind::Config(m), &dataset, &iterations));
    }
    let mut seed_model_ref = None;
    let mut parser = match initial {
        InitialParser::Given(p) => p,
        InitialParser::TrainOnSeed => {
            let trained = trainer
                .train(&dataset, Round { stage, iteration: 0 })
                .map_err(|e| fail(StageErrorKind::Train(e), &dataset, &iterations))?;
            seed_model_ref = trained.model_ref;
            trained.parser
        }
    };
    let sources = dataset.clone();
    let mut seen: BTreeSet<(String, String)> = dataset.iter().map(Example::key).collect();
    for iteration in 1..=cfg.iterations {
        let cands = generate_paraphrases(&sources, paraphraser, cfg.beam, cfg.wh_prefixes, iteration)
            .map_err(|e| fail(StageErrorKind::Paraphrase(e), &dataset, &iterations))?;
        let total = cands.len();
        let mut fresh = Dataset::new(DatasetName::Paraphrased);
        for c in cands.examples {
            let key = c.key();
            if !held_out.contains(&key) && seen.insert(key) {
                fresh.examples.push(c);
            }
        }
        let duplicates = total - fresh.len();
        let (accepted, rejected) = filter_paraphrases(&fresh, parser.as_ref(), &cfg.filter_mode);
        dataset.examples.extend(accepted.examples.iter().cloned());
        let trained = trainer.train(&dataset, Round { stage, iteration }).map_err(|e| {
            // the iteration's data is complete even though training failed
            let mut done = iterations.clone();
            done.push(IterationRecord {
                stage,
                iteration,
                candidates: total,
                duplicates,
                accepted: accepted.clone(),
                rejected: rejected.clone(),
                dataset_size: dataset.len(),
                model_ref: None,
            });
            fail(StageErrorKind::Train(e), &dataset, &done)
        })?;
        parser = trained.parser;
        iterations.push(IterationRecord {
            stage,
            iteration,
            candidates: total,
            duplicates,
            accepted,
            rejected,
            dataset_size: dataset.len(),
            model_ref: trained.model_ref,
        });
    }
    Ok((
        StageOutcome {
            dataset,
            iterations,
            seed_model_ref,
        },
        parser,
    ))
}

pub struct TwoStageOutcome {
    pub stage_one: StageOutcome,
    /// Present when the configuration asks for the second stage.
    pub validation: Option<Dataset>,
    pub stage_two: Option<StageOutcome>,
    /// The parser after the last training round.
    pub parser: Box<dyn FilterParser>,
}

impl TwoStageOutcome {
    /// The final paraphrased training set.
    pub fn dataset(&self) -> &Dataset {
        self.stage_two.as_ref().map_or(&self.stage_one.dataset, |s| &s.dataset)
    }
}

/// Stage one without validation data; then a validation set sampled from
/// its output with weight `p_LM^alpha`; then stage two from the seed with
/// the validation examples held out and the parser carried over from
/// stage one.
pub fn run_two_stage<P: Paraphraser + ?Sized, T: Trainer + ?Sized, S: Scorer + ?Sized>(
    seed: &Dataset,
    cfg: &PipelineConfig,
    paraphraser: &P,
    trainer: &mut T,
    scorer: &S,
) -> Result<TwoStageOutcome, StageError> {
    let none = BTreeSet::new();
    let (stage_one, parser) = run_stage(seed, cfg, 1, paraphraser, trainer, InitialParser::TrainOnSeed, &none)?;
    if !cfg.two_stage {
        return Ok(TwoStageOutcome {
            stage_one,
            validation: None,
            stage_two: None,
            parser,
        });
    }
    let sampling_error = |e| StageError {
        stage: 2,
        kind: StageErrorKind::Sampling(e),
        dataset: stage_one.dataset.clone(),
        iterations: Vec::new(),
    };
    let scored = score_dataset(&stage_one.dataset, scorer, cfg.score_batch_size).map_err(sampling_error)?;
    let (validation, _) = sample_validation(&scored, &cfg.sampling).map_err(sampling_error)?;
    let held_out: BTreeSet<(String, String)> = validation.iter().map(Example::key).collect();
    let (stage_two, parser) = run_stage(
        seed,
        cfg,
        2,
        paraphraser,
        trainer,
        InitialParser::Given(parser),
        &held_out,
    )?;
    Ok(TwoStageOutcome {
        stage_one,
        validation: Some(validation),
        stage_two: Some(stage_two),
        parser,
    })
}
