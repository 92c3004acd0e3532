//! Synchronous context-free grammar: representation, text format, validation
//! and a depth-bounded chart parser over the inverted grammar.
//!
//! Text format, one record per form:
//!
//! ```text
//! ; comment
//! (category X Y)                                   ; optional declarations
//! (rule r1 general (NP) ($UnaryNP $CP) (beta 1 0))
//! (rule r2 lexicon (Entity) ("acl") (constant fb:en.venue.acl))
//! ```
//!
//! Semantic functions: `(identity)`, `(constant <program>)`, `(beta)` or
//! `(beta <fn-child> <arg-child>)`, and `(template <program-with-#i-slots>)`
//! optionally followed by `(shared <i>...)` for slots used more than once.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::rc::Rc;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::program::{self, beta_reduce, Program, ProgramError};
use crate::sexpr::{self, Pos, Sexp};

pub const START: &str = "ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProductionKind {
    General,
    Lexicon,
    IdiomaticMultihop,
    IdiomaticComparative,
    IdiomaticSuperlative,
    IdiomaticMacro,
}

impl ProductionKind {
    pub const ALL: [ProductionKind; 6] = [
        ProductionKind::General,
        ProductionKind::Lexicon,
        ProductionKind::IdiomaticMultihop,
        ProductionKind::IdiomaticComparative,
        ProductionKind::IdiomaticSuperlative,
        ProductionKind::IdiomaticMacro,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProductionKind::General => "general",
            ProductionKind::Lexicon => "lexicon",
            ProductionKind::IdiomaticMultihop => "idiomatic-multihop",
            ProductionKind::IdiomaticComparative => "idiomatic-comparative",
            ProductionKind::IdiomaticSuperlative => "idiomatic-superlative",
            ProductionKind::IdiomaticMacro => "idiomatic-macro",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn is_idiomatic(self) -> bool {
        !matches!(self, ProductionKind::General | ProductionKind::Lexicon)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RhsItem {
    Category(String),
    /// One or more lowercase tokens.
    Terminal(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SemanticFn {
    Identity,
    Constant(Program),
    /// Applies child `func` (a lambda) to child `arg`.
    Beta {
        func: usize,
        arg: usize,
    },
    /// Program skeleton whose `#i` variables are replaced by child programs.
    Template {
        body: Program,
        shared: BTreeSet<usize>,
    },
}

impl SemanticFn {
    /// Number of child programs consumed.
    pub fn arity(&self) -> usize {
        match self {
            SemanticFn::Identity => 1,
            SemanticFn::Constant(_) => 0,
            SemanticFn::Beta { func, arg } => 1 + *func.max(arg),
            SemanticFn::Template { body, .. } => slot_uses(body).keys().next_back().map_or(0, |m| m + 1),
        }
    }

    /// Builds the parent program. Outputs are alpha-normalized.
    pub fn apply(&self, children: &[Program]) -> Result<Program, ProgramError> {
        let out = match self {
            SemanticFn::Identity => children[0].clone(),
            SemanticFn::Constant(p) => p.clone(),
            SemanticFn::Beta { func, arg } => beta_reduce(&children[*func], &children[*arg])?,
            SemanticFn::Template { body, .. } => {
                let map: BTreeMap<String, Program> = children
                    .iter()
                    .enumerate()
                    .map(|(i, c)| (format!("#{i}"), c.clone()))
                    .collect();
                body.substitute(&map)
            }
        };
        Ok(out.alpha_normalize())
    }

    fn write(&self, out: &mut String) {
        match self {
            SemanticFn::Identity => out.push_str("(identity)"),
            SemanticFn::Constant(p) => {
                out.push_str("(constant ");
                out.push_str(&p.render());
                out.push(')');
            }
            SemanticFn::Beta { func, arg } => out.push_str(&format!("(beta {func} {arg})")),
            SemanticFn::Template { body, shared } => {
                out.push_str("(template ");
                out.push_str(&render_template(body));
                if !shared.is_empty() {
                    out.push_str(" (shared");
                    for s in shared {
                        out.push_str(&format!(" {s}"));
                    }
                    out.push(')');
                }
                out.push(')');
            }
        }
    }
}

fn render_template(body: &Program) -> String {
    // Slots are stored as `#i` variables; they render bare.
    let mut map = BTreeMap::new();
    for i in slot_uses(body).keys() {
        map.insert(format!("#{i}"), Program::Type(format!("#{i}")));
    }
    body.substitute(&map).render().replace("fb:en.#", "#")
}

fn slot_uses(body: &Program) -> BTreeMap<usize, usize> {
    let mut uses = BTreeMap::new();
    let free = body.free_vars();
    body.visit(&mut |p| {
        if let Program::Var(n) = p {
            if let Some(i) = program::slot_index(n) {
                if free.contains(n) {
                    *uses.entry(i).or_insert(0) += 1;
                }
            }
        }
    });
    uses
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Production {
    pub id: String,
    pub kind: ProductionKind,
    pub lhs: String,
    pub rhs: Vec<RhsItem>,
    pub semantic: SemanticFn,
}

impl Production {
    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.rhs.iter().filter_map(|item| match item {
            RhsItem::Category(c) => Some(c.as_str()),
            RhsItem::Terminal(_) => None,
        })
    }

    pub fn category_count(&self) -> usize {
        self.categories().count()
    }

    fn check(&self) -> Result<(), GrammarError> {
        if self.rhs.is_empty() {
            return Err(GrammarError::EmptyRhs(self.id.clone()));
        }
        let found = self.category_count();
        let expected = self.semantic.arity();
        if found != expected {
            return Err(GrammarError::ArityMismatch {
                id: self.id.clone(),
                expected,
                found,
            });
        }
        match &self.semantic {
            SemanticFn::Beta { func, arg } if func == arg => {
                return Err(GrammarError::InvalidSemantic {
                    id: self.id.clone(),
                    reason: "beta function and argument must be different children".into(),
                });
            }
            SemanticFn::Template { body, shared } => {
                let uses = slot_uses(body);
                for i in 0..found {
                    let n = uses.get(&i).copied().unwrap_or(0);
                    if n == 0 {
                        return Err(GrammarError::InvalidSemantic {
                            id: self.id.clone(),
                            reason: format!("slot #{i} is never used"),
                        });
                    }
                    if n > 1 && !shared.contains(&i) {
                        return Err(GrammarError::InvalidSemantic {
                            id: self.id.clone(),
                            reason: format!("slot #{i} is used {n} times but not declared shared"),
                        });
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GrammarError {
    Syntax { pos: Pos, message: String },
    DuplicateId { id: String, pos: Option<Pos> },
    UndeclaredCategory { name: String, production: String },
    ArityMismatch { id: String, expected: usize, found: usize },
    InvalidSemantic { id: String, reason: String },
    EmptyRhs(String),
    MissingStart,
}

impl fmt::Display for GrammarError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GrammarError::Syntax { pos, message } => write!(f, "{pos}: syntax error: {message}"),
            GrammarError::DuplicateId { id, pos: Some(pos) } => write!(f, "{pos}: duplicate production id `{id}`"),
            GrammarError::DuplicateId { id, pos: None } => write!(f, "duplicate production id `{id}`"),
            GrammarError::UndeclaredCategory { name, production } => {
                write!(f, "production `{production}` references undeclared category `{name}`")
            }
            GrammarError::ArityMismatch { id, expected, found } => write!(
                f,
                "production `{id}`: semantic function takes {expected} children but the body has {found} categories"
            ),
            GrammarError::InvalidSemantic { id, reason } => write!(f, "production `{id}`: {reason}"),
            GrammarError::EmptyRhs(id) => write!(f, "production `{id}` has an empty body"),
            GrammarError::MissingStart => write!(f, "grammar has no `{START}` category"),
        }
    }
}

impl core::error::Error for GrammarError {}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Diagnostic {
    Unreachable(String),
    Unproductive(String),
    Arity(String),
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::Unreachable(c) => write!(f, "unreachable: {c}"),
            Diagnostic::Unproductive(c) => write!(f, "unproductive: {c}"),
            Diagnostic::Arity(id) => write!(f, "arity: {id}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grammar {
    categories: BTreeSet<String>,
    productions: Vec<Production>,
    start: String,
}

impl Grammar {
    /// Builds a grammar, checking ids, category references and arities.
    /// Categories are the declared ones plus every left-hand side.
    pub fn new(
        declared: impl IntoIterator<Item = String>,
        productions: Vec<Production>,
    ) -> Result<Grammar, GrammarError> {
        let mut categories: BTreeSet<String> = declared.into_iter().collect();
        categories.extend(productions.iter().map(|p| p.lhs.clone()));
        if !categories.contains(START) {
            return Err(GrammarError::MissingStart);
        }
        let mut ids = BTreeSet::new();
        for p in &productions {
            if !ids.insert(p.id.as_str()) {
                return Err(GrammarError::DuplicateId {
                    id: p.id.clone(),
                    pos: None,
                });
            }
            if let Some(c) = p.categories().find(|c| !categories.contains(*c)) {
                return Err(GrammarError::UndeclaredCategory {
                    name: c.to_string(),
                    production: p.id.clone(),
                });
            }
            p.check()?;
        }
        Ok(Grammar {
            categories,
            productions,
            start: START.to_string(),
        })
    }

    pub fn categories(&self) -> &BTreeSet<String> {
        &self.categories
    }

    pub fn productions(&self) -> &[Production] {
        &self.productions
    }

    pub fn start(&self) -> &str {
        &self.start
    }

    pub fn productions_for<'a>(&'a self, lhs: &'a str) -> impl Iterator<Item = &'a Production> + 'a {
        self.productions.iter().filter(move |p| p.lhs == lhs)
    }

    /// Every relation-like string constant mentioned by a production, with
    /// a leading `!` stripped.
    pub fn relations(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut add = |p: &Program| {
            p.visit(&mut |node| {
                if let Program::Str(s) = node {
                    let s = s.strip_prefix('!').unwrap_or(s);
                    if s.contains('.') {
                        out.insert(s.to_string());
                    }
                }
            })
        };
        for p in &self.productions {
            match &p.semantic {
                SemanticFn::Constant(c) => add(c),
                SemanticFn::Template { body, .. } => add(body),
                _ => {}
            }
        }
        out
    }

    /// Renders the grammar back to its text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("(category");
        for c in &self.categories {
            out.push(' ');
            out.push_str(c);
        }
        out.push_str(")\n");
        for p in &self.productions {
            out.push_str(&format!("(rule {} {} ({}) (", p.id, p.kind.as_str(), p.lhs));
            for (i, item) in p.rhs.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                match item {
                    RhsItem::Category(c) => {
                        out.push('$');
                        out.push_str(c);
                    }
                    RhsItem::Terminal(words) => sexpr::write_quoted(&mut out, &words.join(" ")),
                }
            }
            out.push_str(") ");
            p.semantic.write(&mut out);
            out.push_str(")\n");
        }
        out
    }

    /// Reports unreachable and unproductive categories plus arity problems.
    /// An empty list means the grammar is clean.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut diags = Vec::new();
        for p in &self.productions {
            if p.check().is_err() {
                diags.push(Diagnostic::Arity(p.id.clone()));
            }
        }

        let mut productive: BTreeSet<&str> = BTreeSet::new();
        loop {
            let before = productive.len();
            for p in &self.productions {
                if p.categories().all(|c| productive.contains(c)) {
                    productive.insert(&p.lhs);
                }
            }
            if productive.len() == before {
                break;
            }
        }

        let mut reachable: BTreeSet<&str> = BTreeSet::new();
        let mut stack = vec![self.start.as_str()];
        while let Some(c) = stack.pop() {
            if !reachable.insert(c) {
                continue;
            }
            for p in self.productions_for(c) {
                stack.extend(p.categories());
            }
        }

        for c in &self.categories {
            if !reachable.contains(c.as_str()) {
                diags.push(Diagnostic::Unreachable(c.clone()));
            }
            if !productive.contains(c.as_str()) {
                diags.push(Diagnostic::Unproductive(c.clone()));
            }
        }
        diags
    }
}

fn syntax(pos: Pos, message: impl Into<String>) -> GrammarError {
    GrammarError::Syntax {
        pos,
        message: message.into(),
    }
}

/// Parses grammar text. Production order follows the file.
pub fn load_grammar(text: &str) -> Result<Grammar, GrammarError> {
    let forms = sexpr::read_all(text).map_err(|e| syntax(e.pos, e.message))?;
    let mut declared = Vec::new();
    let mut productions: Vec<Production> = Vec::new();
    let mut seen: BTreeMap<String, Pos> = BTreeMap::new();
    for form in &forms {
        let items = form.as_list().ok_or_else(|| syntax(form.pos(), "expected a record"))?;
        match items.first().and_then(Sexp::as_atom) {
            Some("category") => {
                for item in &items[1..] {
                    let name = item
                        .as_atom()
                        .ok_or_else(|| syntax(item.pos(), "expected a category name"))?;
                    declared.push(name.to_string());
                }
            }
            Some("rule") => {
                let p = parse_rule(form.pos(), &items[1..])?;
                if seen.insert(p.id.clone(), form.pos()).is_some() {
                    return Err(GrammarError::DuplicateId {
                        id: p.id,
                        pos: Some(form.pos()),
                    });
                }
                productions.push(p);
            }
            _ => return Err(syntax(form.pos(), "expected `rule` or `category` record")),
        }
    }
    Grammar::new(declared, productions)
}

fn parse_rule(pos: Pos, fields: &[Sexp]) -> Result<Production, GrammarError> {
    if fields.len() != 5 {
        return Err(syntax(pos, "rule needs: id kind (LHS) (rhs...) semantic-fn"));
    }
    let id = fields[0]
        .as_atom()
        .ok_or_else(|| syntax(fields[0].pos(), "expected rule id"))?;
    let kind_text = fields[1]
        .as_atom()
        .ok_or_else(|| syntax(fields[1].pos(), "expected rule kind"))?;
    let kind = ProductionKind::parse(kind_text)
        .ok_or_else(|| syntax(fields[1].pos(), format!("unknown rule kind `{kind_text}`")))?;
    let lhs = match fields[2].as_list() {
        Some([Sexp::Atom(a, _)]) => a.clone(),
        _ => return Err(syntax(fields[2].pos(), "expected (LHS)")),
    };
    let rhs_items = fields[3]
        .as_list()
        .ok_or_else(|| syntax(fields[3].pos(), "expected (rhs...)"))?;
    let mut rhs = Vec::new();
    for item in rhs_items {
        match item {
            Sexp::Atom(a, p) => match a.strip_prefix('$') {
                Some(c) if !c.is_empty() => rhs.push(RhsItem::Category(c.to_string())),
                _ => return Err(syntax(*p, format!("rhs item `{a}` must be $Category or \"terminal\""))),
            },
            Sexp::Str(s, p) => {
                let words = crate::tokenize(s);
                if words.is_empty() {
                    return Err(syntax(*p, "empty terminal"));
                }
                rhs.push(RhsItem::Terminal(words));
            }
            Sexp::List(_, p) => return Err(syntax(*p, "nested list in rhs")),
        }
    }
    let semantic = parse_semantic(&fields[4])?;
    Ok(Production {
        id: id.to_string(),
        kind,
        lhs,
        rhs,
        semantic,
    })
}

fn parse_semantic(form: &Sexp) -> Result<SemanticFn, GrammarError> {
    let items = form
        .as_list()
        .ok_or_else(|| syntax(form.pos(), "expected semantic function"))?;
    let prog = |s: &Sexp, slots: bool| program::from_sexp(s, slots).map_err(|e| syntax(s.pos(), format!("{e}")));
    let index = |s: &Sexp| -> Result<usize, GrammarError> {
        s.as_atom()
            .and_then(|a| a.parse().ok())
            .ok_or_else(|| syntax(s.pos(), "expected child index"))
    };
    match (items.first().and_then(Sexp::as_atom), items.len()) {
        (Some("identity"), 1) => Ok(SemanticFn::Identity),
        (Some("constant"), 2) => Ok(SemanticFn::Constant(prog(&items[1], false)?)),
        (Some("beta"), 1) => Ok(SemanticFn::Beta { func: 0, arg: 1 }),
        (Some("beta"), 3) => Ok(SemanticFn::Beta {
            func: index(&items[1])?,
            arg: index(&items[2])?,
        }),
        (Some("template"), 2 | 3) => {
            let body = prog(&items[1], true)?;
            let mut shared = BTreeSet::new();
            if let Some(decl) = items.get(2) {
                match decl.as_list() {
                    Some([Sexp::Atom(tag, _), rest @ ..]) if tag == "shared" => {
                        for s in rest {
                            shared.insert(index(s)?);
                        }
                    }
                    _ => return Err(syntax(decl.pos(), "expected (shared <index>...)")),
                }
            }
            Ok(SemanticFn::Template { body, shared })
        }
        _ => Err(syntax(form.pos(), "unknown semantic function")),
    }
}

type Cell = Rc<BTreeMap<String, (Program, u32)>>;

/// Depth-bounded chart parser. Each call owns its chart.
pub struct ChartParser<'g> {
    grammar: &'g Grammar,
    tokens: &'g [String],
    memo: BTreeMap<(&'g str, usize, usize, u32), Cell>,
}

impl<'g> ChartParser<'g> {
    pub fn new(grammar: &'g Grammar, tokens: &'g [String]) -> Self {
        ChartParser {
            grammar,
            tokens,
            memo: BTreeMap::new(),
        }
    }

    /// Programs for `category` spanning `tokens[i..j]` with at most `budget`
    /// rule applications, keyed by rendering, with the least depth found.
    fn cell(&mut self, category: &'g str, i: usize, j: usize, budget: u32) -> Cell {
        if let Some(c) = self.memo.get(&(category, i, j, budget)) {
            return c.clone();
        }
        let mut out: BTreeMap<String, (Program, u32)> = BTreeMap::new();
        if budget > 0 && i < j {
            let grammar = self.grammar;
            for p in grammar.productions_for(category) {
                let mut combos = Vec::new();
                self.match_items(&p.rhs, i, j, budget - 1, 0, &mut Vec::new(), &mut combos);
                for (children, depth) in combos {
                    let depth = depth + 1;
                    let Ok(prog) = p.semantic.apply(&children) else {
                        continue;
                    };
                    let key = prog.render();
                    match out.get_mut(&key) {
                        Some(entry) if entry.1 <= depth => {}
                        Some(entry) => entry.1 = depth,
                        None => {
                            out.insert(key, (prog, depth));
                        }
                    }
                }
            }
        }
        let cell = Rc::new(out);
        self.memo.insert((category, i, j, budget), cell.clone());
        cell
    }

    #[allow(clippy::too_many_arguments)]
    fn match_items(
        &mut self,
        items: &'g [RhsItem],
        pos: usize,
        end: usize,
        budget: u32,
        used: u32,
        children: &mut Vec<Program>,
        out: &mut Vec<(Vec<Program>, u32)>,
    ) {
        let Some((first, rest)) = items.split_first() else {
            if pos == end {
                out.push((children.clone(), used));
            }
            return;
        };
        let min_rest: usize = rest
            .iter()
            .map(|r| match r {
                RhsItem::Category(_) => 1,
                RhsItem::Terminal(w) => w.len(),
            })
            .sum();
        let rest_cats = rest.iter().filter(|r| matches!(r, RhsItem::Category(_))).count() as u32;
        match first {
            RhsItem::Terminal(words) => {
                let stop = pos + words.len();
                if stop <= end && self.tokens[pos..stop] == words[..] {
                    self.match_items(rest, stop, end, budget, used, children, out);
                }
            }
            RhsItem::Category(c) => {
                if end < pos + 1 + min_rest || used + 1 + rest_cats > budget {
                    return;
                }
                // each remaining category needs at least one application
                let child_budget = budget - used - rest_cats;
                for stop in pos + 1..=end - min_rest {
                    let cell = self.cell(c, pos, stop, child_budget);
                    for (prog, depth) in cell.values() {
                        children.push(prog.clone());
                        self.match_items(rest, stop, end, budget, used + depth, children, out);
                        children.pop();
                    }
                }
            }
        }
    }

    pub fn parse(&mut self, max_depth: u32) -> Vec<(Program, u32)> {
        let n = self.tokens.len();
        let start = self.grammar.start.as_str();
        self.cell(start, 0, n, max_depth).values().cloned().collect()
    }
}

/// Every program derivable for exactly `tokens` from the start category with
/// at most `max_depth` rule applications, deduplicated and ordered by
/// rendering.
pub fn parse_utterance(grammar: &Grammar, tokens: &[String], max_depth: u32) -> Vec<Program> {
    ChartParser::new(grammar, tokens)
        .parse(max_depth)
        .into_iter()
        .map(|(p, _)| p)
        .collect()
}
