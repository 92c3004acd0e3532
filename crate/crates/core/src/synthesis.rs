//! Exhaustive canonical-example enumeration, constraint filtering and depth
//! bucketing.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::dataset::{Dataset, DatasetName, Example, Provenance};
use crate::grammar::{Grammar, Production, RhsItem};
use crate::program::{Program, ProgramError};

pub const DEFAULT_MAX_EXAMPLES: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SynthesisError {
    InvalidDepth,
    /// The explosion guard tripped.
    TooManyExamples {
        cap: usize,
    },
    OpenProgram(ProgramError),
    UnknownRelation(String),
    InvalidConstraint(String),
}

impl fmt::Display for SynthesisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthesisError::InvalidDepth => write!(f, "max depth must be at least 1"),
            SynthesisError::TooManyExamples { cap } => {
                write!(
                    f,
                    "enumeration aborted: more than {cap} derivations (raise the cap or lower the depth)"
                )
            }
            SynthesisError::OpenProgram(e) => write!(f, "start category produced an open program: {e}"),
            SynthesisError::UnknownRelation(r) => {
                write!(f, "constraint refers to relation `{r}` absent from the grammar")
            }
            SynthesisError::InvalidConstraint(m) => write!(f, "invalid constraint: {m}"),
        }
    }
}

impl core::error::Error for SynthesisError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnumerateConfig {
    pub max_depth: u32,
    pub max_examples: usize,
}

impl EnumerateConfig {
    pub fn new(max_depth: u32) -> Self {
        EnumerateConfig {
            max_depth,
            max_examples: DEFAULT_MAX_EXAMPLES,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EnumerationStats {
    /// Derivations of the start category, before deduplication.
    pub derivations: usize,
    pub duplicates: usize,
    /// Derivations dropped because a semantic function did not apply
    /// (e.g. beta reduction of a non-lambda child).
    pub semantic_failures: usize,
}

#[derive(Clone)]
struct Derivation {
    tokens: Vec<String>,
    program: Program,
}

/// Compositions of `total` into `parts` positive integers, lexicographic.
fn compositions(total: u32, parts: usize) -> Vec<Vec<u32>> {
    if parts == 0 {
        return if total == 0 { vec![Vec::new()] } else { Vec::new() };
    }
    if (total as usize) < parts {
        return Vec::new();
    }
    let mut out = Vec::new();
    for first in 1..=total - (parts as u32 - 1) {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

struct Table<'g> {
    grammar: &'g Grammar,
    /// (category, exact depth) -> derivations
    cells: BTreeMap<(&'g str, u32), Vec<Derivation>>,
    stored: usize,
    cap: usize,
    failures: usize,
}

impl<'g> Table<'g> {
    fn fill(&mut self, depth: u32) -> Result<(), SynthesisError> {
        let grammar = self.grammar;
        for category in grammar.categories() {
            let mut out = Vec::new();
            for p in grammar.productions_for(category) {
                self.expand(p, depth, &mut out)?;
            }
            self.cells.insert((category.as_str(), depth), out);
        }
        Ok(())
    }

    fn expand(&mut self, p: &'g Production, depth: u32, out: &mut Vec<Derivation>) -> Result<(), SynthesisError> {
        let cats: Vec<&str> = p.categories().collect();
        for split in compositions(depth - 1, cats.len()) {
            let lists: Vec<&[Derivation]> = cats
                .iter()
                .zip(&split)
                .map(|(c, d)| self.cells.get(&(*c, *d)).map_or(&[][..], Vec::as_slice))
                .collect();
            if lists.iter().any(|l| l.is_empty()) {
                continue;
            }
            let mut idx = vec![0usize; lists.len()];
            let mut produced = Vec::new();
            loop {
                let children: Vec<&Derivation> = idx.iter().zip(&lists).map(|(i, l)| &l[*i]).collect();
                let programs: Vec<Program> = children.iter().map(|c| c.program.clone()).collect();
                match p.semantic.apply(&programs) {
                    Ok(program) => {
                        let mut tokens = Vec::new();
                        let mut next = children.iter();
                        for item in &p.rhs {
                            match item {
                                RhsItem::Terminal(words) => tokens.extend(words.iter().cloned()),
                                RhsItem::Category(_) => {
                                    if let Some(c) = next.next() {
                                        tokens.extend(c.tokens.iter().cloned());
                                    }
                                }
                            }
                        }
                        produced.push(Derivation { tokens, program });
                        self.stored += 1;
                        if self.stored > self.cap {
                            return Err(SynthesisError::TooManyExamples { cap: self.cap });
                        }
                    }
                    Err(_) => self.failures += 1,
                }
                if !advance(&mut idx, &lists) {
                    break;
                }
            }
            out.extend(produced);
        }
        Ok(())
    }
}

/// Odometer step over a cartesian product, last position fastest. Returns
/// false once every combination has been visited.
fn advance(idx: &mut [usize], lists: &[&[Derivation]]) -> bool {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < lists[k].len() {
            return true;
        }
        idx[k] = 0;
    }
    false
}

/// Enumerates every derivation from the start category with at most
/// `max_depth` rule applications. Output is depth-ascending, then in
/// production file order; duplicate (utterance, program) pairs keep the
/// shallowest occurrence.
pub fn enumerate(grammar: &Grammar, max_depth: u32) -> Result<Dataset, SynthesisError> {
    enumerate_with(grammar, EnumerateConfig::new(max_depth)).map(|(d, _)| d)
}

pub fn enumerate_with(grammar: &Grammar, cfg: EnumerateConfig) -> Result<(Dataset, EnumerationStats), SynthesisError> {
    if cfg.max_depth == 0 {
        return Err(SynthesisError::InvalidDepth);
    }
    let mut table = Table {
        grammar,
        cells: BTreeMap::new(),
        stored: 0,
        cap: cfg.max_examples,
        failures: 0,
    };
    let mut stats = EnumerationStats::default();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    let mut examples = Vec::new();
    for depth in 1..=cfg.max_depth {
        table.fill(depth)?;
        let roots = table
            .cells
            .get(&(grammar.start(), depth))
            .map_or(&[][..], Vec::as_slice);
        for d in roots {
            stats.derivations += 1;
            let key = (d.tokens.join(" "), d.program.render());
            if !seen.insert(key) {
                stats.duplicates += 1;
                continue;
            }
            let id = format!("can-{:07}", examples.len());
            let ex = Example::new(id, d.tokens.clone(), d.program.clone(), depth, Provenance::Canonical)
                .map_err(SynthesisError::OpenProgram)?;
            examples.push(ex);
        }
    }
    stats.semantic_failures = table.failures;
    Ok((
        Dataset {
            name: DatasetName::Canonical,
            examples,
        },
        stats,
    ))
}

/// Number of derivations of `category` with exactly `depth` rule
/// applications, from the counting recurrence over categories x depth.
pub fn count_derivations(grammar: &Grammar, category: &str, depth: u32) -> u128 {
    let mut counts: BTreeMap<(&str, u32), u128> = BTreeMap::new();
    for d in 1..=depth {
        for c in grammar.categories() {
            let mut total = 0u128;
            for p in grammar.productions_for(c) {
                let cats: Vec<&str> = p.categories().collect();
                for split in compositions(d - 1, cats.len()) {
                    total += cats
                        .iter()
                        .zip(&split)
                        .map(|(c, k)| counts.get(&(*c, *k)).copied().unwrap_or(0))
                        .product::<u128>();
                }
            }
            counts.insert((c.as_str(), d), total);
        }
    }
    counts.get(&(category, depth)).copied().unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConstraintRule {
    /// `=`-filters on `relation` chained into one conjunction must bind
    /// distinct entities. Conjunctions with fewer than `arity` such filters
    /// are not checked.
    DistinctEntities { relation: String, arity: usize },
}

impl ConstraintRule {
    pub fn distinct_entities(relation: impl Into<String>, arity: usize) -> Self {
        ConstraintRule::DistinctEntities {
            relation: relation.into(),
            arity,
        }
    }

    fn check(&self, grammar: &Grammar) -> Result<(), SynthesisError> {
        match self {
            ConstraintRule::DistinctEntities { relation, arity } => {
                if *arity < 2 {
                    return Err(SynthesisError::InvalidConstraint(format!(
                        "distinct-entities arity must be at least 2, got {arity}"
                    )));
                }
                if !grammar.relations().contains(relation) {
                    return Err(SynthesisError::UnknownRelation(relation.clone()));
                }
                Ok(())
            }
        }
    }

    pub fn violated_by(&self, program: &Program) -> bool {
        match self {
            ConstraintRule::DistinctEntities { relation, arity } => {
                let mut violated = false;
                visit_chains(program, &mut |chain| {
                    let bound: Vec<&str> = chain
                        .iter()
                        .filter_map(|args| match (&args[1], &args[2], &args[3]) {
                            (Program::Str(r), Program::Str(c), Program::Entity { id, .. })
                                if r == relation && c == "=" =>
                            {
                                Some(id.as_str())
                            }
                            _ => None,
                        })
                        .collect();
                    if bound.len() >= *arity {
                        let distinct: BTreeSet<&str> = bound.iter().copied().collect();
                        if distinct.len() < bound.len() {
                            violated = true;
                        }
                    }
                });
                violated
            }
        }
    }
}

impl fmt::Display for ConstraintRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintRule::DistinctEntities { relation, arity } => write!(f, "distinct-entities:{relation}:{arity}"),
        }
    }
}

impl core::str::FromStr for ConstraintRule {
    type Err = SynthesisError;

    /// Parses `distinct-entities:<relation>:<arity>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(':');
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some("distinct-entities"), Some(rel), Some(arity), None) if !rel.is_empty() => {
                let arity = arity
                    .parse()
                    .map_err(|_| SynthesisError::InvalidConstraint(s.to_string()))?;
                Ok(ConstraintRule::distinct_entities(rel, arity))
            }
            _ => Err(SynthesisError::InvalidConstraint(s.to_string())),
        }
    }
}

/// Calls `f` with the argument lists of every maximal chain of nested
/// `filter` calls (outermost first).
fn visit_chains<'a>(program: &'a Program, f: &mut dyn FnMut(&[&'a [Program]])) {
    fn filter_args(p: &Program) -> Option<&[Program]> {
        match p {
            Program::Call { head, args } if head == "filter" && args.len() == 4 => Some(args),
            _ => None,
        }
    }
    fn walk<'a>(p: &'a Program, in_chain: bool, f: &mut dyn FnMut(&[&'a [Program]])) {
        if let (Some(_), false) = (filter_args(p), in_chain) {
            let mut chain = Vec::new();
            let mut cur = p;
            while let Some(args) = filter_args(cur) {
                chain.push(args);
                cur = &args[0];
            }
            f(&chain);
        }
        match p {
            Program::Call { args, .. } => {
                let chained = filter_args(p).is_some();
                for (i, a) in args.iter().enumerate() {
                    walk(a, chained && i == 0, f);
                }
            }
            Program::Lambda { body, .. } => walk(body, false, f),
            _ => {}
        }
    }
    walk(program, false, f);
}

/// Removes examples violating any rule; survivors keep their order.
pub fn apply_constraints(
    dataset: &Dataset,
    rules: &[ConstraintRule],
    grammar: &Grammar,
) -> Result<Dataset, SynthesisError> {
    for r in rules {
        r.check(grammar)?;
    }
    Ok(Dataset {
        name: dataset.name,
        examples: dataset
            .iter()
            .filter(|e| !rules.iter().any(|r| r.violated_by(&e.program)))
            .cloned()
            .collect(),
    })
}

/// Partitions a dataset by derivation depth.
pub fn bucket_by_depth(dataset: &Dataset) -> BTreeMap<u32, Dataset> {
    let mut out: BTreeMap<u32, Dataset> = BTreeMap::new();
    for e in dataset {
        out.entry(e.depth)
            .or_insert_with(|| Dataset::new(dataset.name))
            .examples
            .push(e.clone());
    }
    out
}
