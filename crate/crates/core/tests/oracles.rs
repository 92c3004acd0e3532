//! The demo grammar and database checked against naive, independently
//! written reference implementations.

use std::collections::{BTreeMap, BTreeSet};

use synthparse_core::executor::{execute, load_database, Database, Denotation, Value};
use synthparse_core::grammar::{load_grammar, parse_utterance, Grammar, RhsItem, SemanticFn};
use synthparse_core::program::{Program, Rational};
use synthparse_core::synthesis::{count_derivations, enumerate};

const DEPTH: u32 = 6;

fn data(name: &str) -> String {
    let path = format!("{}/../../data/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn demo_grammar() -> Grammar {
    load_grammar(&data("demo.grammar")).unwrap()
}

fn demo_db() -> Database {
    load_database(&data("demo.db")).unwrap()
}

// ---------------------------------------------------------------------------
// naive enumerator: plain recursion over every derivation, no tables

fn subst(p: &Program, name: &str, val: &Program) -> Program {
    match p {
        Program::Var(n) if n == name => val.clone(),
        Program::Lambda { param, .. } if param == name => p.clone(),
        Program::Lambda { param, body } => Program::Lambda {
            param: param.clone(),
            body: Box::new(subst(body, name, val)),
        },
        Program::Call { head, args } => Program::Call {
            head: head.clone(),
            args: args.iter().map(|a| subst(a, name, val)).collect(),
        },
        _ => p.clone(),
    }
}

/// Binder names replaced by their de Bruijn depth, printed as text.
fn canon(p: &Program, env: &mut Vec<String>) -> String {
    match p {
        Program::Var(n) => match env.iter().rposition(|b| b == n) {
            Some(i) => format!("(bound {i})"),
            None => format!("(free {n})"),
        },
        Program::Lambda { param, body } => {
            env.push(param.clone());
            let s = format!("(lambda {})", canon(body, env));
            env.pop();
            s
        }
        Program::Call { head, args } => {
            let inner: Vec<String> = args.iter().map(|a| canon(a, env)).collect();
            format!("(call {head} {})", inner.join(" "))
        }
        other => other.render(),
    }
}

fn apply_naive(sem: &SemanticFn, kids: &[Program]) -> Option<Program> {
    match sem {
        SemanticFn::Identity => Some(kids[0].clone()),
        SemanticFn::Constant(p) => Some(p.clone()),
        SemanticFn::Beta { func, arg } => match &kids[*func] {
            Program::Lambda { param, body } => Some(subst(body, param, &kids[*arg])),
            _ => None,
        },
        SemanticFn::Template { body, .. } => {
            let mut out = body.clone();
            for (i, k) in kids.iter().enumerate() {
                out = subst(&out, &format!("#{i}"), k);
            }
            Some(out)
        }
    }
}

type Derivation = (Vec<String>, Program, u32);

/// Every derivation of `cat` using at most `budget` rule applications.
fn derive(g: &Grammar, cat: &str, budget: u32) -> Vec<Derivation> {
    let mut out = Vec::new();
    if budget == 0 {
        return out;
    }
    for p in g.productions().iter().filter(|p| p.lhs == cat) {
        // partial: (tokens, children, applications used)
        let mut partial: Vec<(Vec<String>, Vec<Program>, u32)> = vec![(vec![], vec![], 1)];
        for item in &p.rhs {
            let mut next = Vec::new();
            for (toks, kids, used) in &partial {
                match item {
                    RhsItem::Terminal(words) => {
                        let mut t = toks.clone();
                        t.extend(words.iter().cloned());
                        next.push((t, kids.clone(), *used));
                    }
                    RhsItem::Category(c) => {
                        for (ct, cp, cd) in derive(g, c, budget - used) {
                            let mut t = toks.clone();
                            t.extend(ct);
                            let mut k = kids.clone();
                            k.push(cp);
                            next.push((t, k, used + cd));
                        }
                    }
                }
            }
            partial = next;
        }
        for (toks, kids, used) in partial {
            if let Some(prog) = apply_naive(&p.semantic, &kids) {
                out.push((toks, prog, used));
            }
        }
    }
    out
}

#[test]
fn enumeration_matches_naive_enumerator() {
    let g = demo_grammar();
    let started = std::time::Instant::now();
    let fast = enumerate(&g, DEPTH).unwrap();
    assert!(started.elapsed().as_secs() < 60);

    let naive = derive(&g, "ROOT", DEPTH);
    let want: BTreeSet<(String, String)> = naive
        .iter()
        .map(|(t, p, _)| (t.join(" "), canon(p, &mut vec![])))
        .collect();
    let got: BTreeSet<(String, String)> = fast
        .iter()
        .map(|e| (e.text(), canon(&e.program, &mut vec![])))
        .collect();
    assert_eq!(got.len(), fast.len(), "enumerator emitted duplicate pairs");
    assert_eq!(got, want);

    // each example carries the shallowest depth at which its pair appears
    let mut shallowest: BTreeMap<(String, String), u32> = BTreeMap::new();
    for (t, p, d) in &naive {
        let e = shallowest.entry((t.join(" "), canon(p, &mut vec![]))).or_insert(*d);
        *e = (*e).min(*d);
    }
    for e in &fast {
        assert_eq!(
            e.depth,
            shallowest[&(e.text(), canon(&e.program, &mut vec![]))],
            "{}",
            e.text()
        );
    }
}

#[test]
fn derivation_counts_match_naive_enumerator() {
    let g = demo_grammar();
    let naive = derive(&g, "ROOT", DEPTH);
    for d in 1..=DEPTH {
        let exact = naive.iter().filter(|(_, _, used)| *used == d).count() as u128;
        assert_eq!(count_derivations(&g, "ROOT", d), exact, "depth {d}");
    }
}

#[test]
fn every_example_parses_back_to_its_template() {
    let g = demo_grammar();
    let d = enumerate(&g, DEPTH).unwrap();
    assert!(!d.is_empty());
    for e in &d {
        let parses = parse_utterance(&g, &e.utterance, DEPTH);
        assert!(
            parses.iter().any(|p| p.template_key().unwrap() == e.template),
            "{} does not parse back to {}",
            e.text(),
            e.template
        );
        assert!(parses.contains(&e.program), "{}", e.text());
    }
}

// ---------------------------------------------------------------------------
// naive interpreter: linear scans of the triple list, no indexes

#[derive(Debug, PartialEq)]
enum NaiveError {
    UnknownProperty,
    Mismatch,
    NonNumeric,
    EmptySuperlative,
    Unbound,
    Malformed,
}

struct Naive<'a> {
    db: &'a Database,
}

impl Naive<'_> {
    fn entities(&self) -> Vec<Value> {
        let mut all = Vec::new();
        for t in self.db.triples() {
            for v in [&t.subject, &t.object] {
                if matches!(v, Value::Entity { .. }) && !all.contains(v) {
                    all.push(v.clone());
                }
            }
        }
        // entities that appear in no triple
        for ty in self.db.types() {
            for v in self.db.instances_of(ty) {
                if !all.contains(v) {
                    all.push(v.clone());
                }
            }
        }
        all
    }

    fn known(&self, prop: &str) -> bool {
        let base = prop.trim_start_matches('!');
        base == "type" || self.db.triples().iter().any(|t| t.property == base) || self.db.has_property(base)
    }

    fn related(&self, s: &Value, prop: &str) -> Vec<Value> {
        match prop {
            "type" => match s {
                Value::Entity { entity_type, .. } => vec![Value::Type(entity_type.clone())],
                _ => vec![],
            },
            "!type" => self
                .entities()
                .into_iter()
                .filter(|e| matches!((e, s), (Value::Entity { entity_type, .. }, Value::Type(t)) if entity_type == t))
                .collect(),
            _ => {
                let mut out = vec![];
                for t in self.db.triples() {
                    if let Some(base) = prop.strip_prefix('!') {
                        if t.property == base && &t.object == s {
                            out.push(t.subject.clone());
                        }
                    } else if t.property == prop && &t.subject == s {
                        out.push(t.object.clone());
                    }
                }
                out
            }
        }
    }

    fn num(&self, v: &Value) -> Option<Rational> {
        self.db.numeric(v)
    }

    fn text(&self, p: &Program) -> Result<String, NaiveError> {
        match p {
            Program::Str(s) => Ok(s.clone()),
            _ => Err(NaiveError::Malformed),
        }
    }

    fn eval(&self, p: &Program) -> Result<Vec<Value>, NaiveError> {
        let set = match p {
            Program::Str(s) => vec![Value::Text(s.clone())],
            Program::Number(n) => vec![Value::Number { value: *n, unit: None }],
            Program::Entity { id, entity_type } => vec![Value::entity(id, entity_type)],
            Program::Type(t) => vec![Value::Type(t.clone())],
            Program::Var(_) | Program::Lambda { .. } => return Err(NaiveError::Malformed),
            Program::Call { head, args } => match (head.as_str(), args.as_slice()) {
                ("listValue" | "singleton", [a]) => self.eval(a)?,
                ("count", [a]) => vec![Value::number(dedup(self.eval(a)?).len() as i64)],
                ("getProperty", [s, prop]) => {
                    let prop = self.text(prop)?;
                    let subjects = self.eval(s)?;
                    if !self.known(&prop) {
                        return Err(NaiveError::UnknownProperty);
                    }
                    subjects.iter().flat_map(|s| self.related(s, &prop)).collect()
                }
                ("filter", [s, rel, cmp, obj]) => {
                    let subjects = self.eval(s)?;
                    let rel = self.text(rel)?;
                    let cmp = self.text(cmp)?;
                    let objects = self.eval(obj)?;
                    if !self.known(&rel) {
                        return Err(NaiveError::UnknownProperty);
                    }
                    let mut out = vec![];
                    for s in dedup(subjects) {
                        let vals = self.related(&s, &rel);
                        let keep = match cmp.as_str() {
                            "=" => vals.iter().any(|v| objects.contains(v)),
                            "!=" => !vals.is_empty() && vals.iter().all(|v| !objects.contains(v)),
                            "<" | ">" | "<=" | ">=" => {
                                let mut any = false;
                                for v in &vals {
                                    for o in &objects {
                                        let (Some(a), Some(b)) = (self.num(v), self.num(o)) else {
                                            return Err(NaiveError::Mismatch);
                                        };
                                        any |= match cmp.as_str() {
                                            "<" => a < b,
                                            ">" => a > b,
                                            "<=" => a <= b,
                                            _ => a >= b,
                                        };
                                    }
                                }
                                any
                            }
                            _ => return Err(NaiveError::Malformed),
                        };
                        if keep {
                            out.push(s);
                        }
                    }
                    out
                }
                ("superlative", [s, mode, rel]) => {
                    let subjects = dedup(self.eval(s)?);
                    let max = self.mode(mode)?;
                    let rel = self.text(rel)?;
                    if !self.known(&rel) {
                        return Err(NaiveError::UnknownProperty);
                    }
                    if subjects.is_empty() {
                        return Err(NaiveError::EmptySuperlative);
                    }
                    let mut scored = vec![];
                    for s in subjects {
                        let mut nums = vec![];
                        for v in self.related(&s, &rel) {
                            nums.push(self.num(&v).ok_or(NaiveError::NonNumeric)?);
                        }
                        let best = if max { nums.iter().max() } else { nums.iter().min() };
                        if let Some(b) = best {
                            scored.push((s, *b));
                        }
                    }
                    pick(scored, max)
                }
                ("countSuperlative", [s, mode, rel, pool]) => {
                    let subjects = dedup(self.eval(s)?);
                    let max = self.mode(mode)?;
                    let rel = self.text(rel)?;
                    let pool = dedup(self.eval(pool)?);
                    if !self.known(&rel) {
                        return Err(NaiveError::UnknownProperty);
                    }
                    if subjects.is_empty() {
                        return Err(NaiveError::EmptySuperlative);
                    }
                    let scored = subjects
                        .into_iter()
                        .map(|s| {
                            let n = dedup(self.related(&s, &rel))
                                .iter()
                                .filter(|v| pool.contains(v))
                                .count();
                            (s, Rational::from_integer(n as i64))
                        })
                        .collect();
                    pick(scored, max)
                }
                ("listValue" | "singleton" | "count" | "getProperty" | "filter" | "superlative", _)
                | ("countSuperlative", _) => return Err(NaiveError::Malformed),
                _ => return Err(NaiveError::Unbound),
            },
        };
        Ok(dedup(set))
    }

    fn mode(&self, p: &Program) -> Result<bool, NaiveError> {
        match self.text(p)?.as_str() {
            "max" => Ok(true),
            "min" => Ok(false),
            _ => Err(NaiveError::Malformed),
        }
    }
}

fn dedup(mut v: Vec<Value>) -> Vec<Value> {
    v.sort();
    v.dedup();
    v
}

fn pick(scored: Vec<(Value, Rational)>, max: bool) -> Vec<Value> {
    let target = if max {
        scored.iter().map(|(_, n)| *n).max()
    } else {
        scored.iter().map(|(_, n)| *n).min()
    };
    scored
        .into_iter()
        .filter(|(_, n)| Some(*n) == target)
        .map(|(v, _)| v)
        .collect()
}

#[test]
fn executor_matches_naive_interpreter_on_every_demo_program() {
    let g = demo_grammar();
    let db = demo_db();
    let naive = Naive { db: &db };
    let d = enumerate(&g, DEPTH).unwrap();
    let mut agreed = 0;
    for e in &d {
        let fast = execute(&e.program, &db);
        let slow = naive.eval(&e.program);
        match (&fast, &slow) {
            (Ok(a), Ok(b)) => assert_eq!(a.iter().cloned().collect::<Vec<_>>(), *b, "{}", e.program),
            (Err(_), Err(_)) => {}
            _ => panic!("{}: executor {fast:?} vs naive {slow:?}", e.program),
        }
        agreed += 1;
    }
    assert_eq!(agreed, d.len());
}

#[test]
fn naive_interpreter_agrees_on_hand_written_programs() {
    let db = demo_db();
    let naive = Naive { db: &db };
    let programs = [
        "(call count (call getProperty (call singleton fb:en.venue) (string !type)))",
        "(call filter (call getProperty (call singleton fb:en.paper) (string !type)) (string paper.publication_year) (string >) fb:en.year.2014)",
        "(call filter (call getProperty (call singleton fb:en.paper) (string !type)) (string paper.venue) (string !=) fb:en.venue.acl)",
        "(call superlative (call getProperty (call singleton fb:en.paper) (string !type)) (string min) (string paper.publication_year))",
        "(call getProperty fb:en.venue.acl (string !paper.venue))",
        "(call getProperty fb:en.paper.p1 (string type))",
        "(call getProperty fb:en.paper.p1 (string paper.nope))",
        "(call superlative (call getProperty (call singleton fb:en.paper) (string !type)) (string max) (string paper.venue))",
        "(call frobnicate fb:en.paper.p1)",
    ];
    for text in programs {
        let p: Program = text.parse().unwrap();
        match (execute(&p, &db), naive.eval(&p)) {
            (Ok(a), Ok(b)) => assert_eq!(a.into_iter().collect::<Vec<_>>(), b, "{text}"),
            (Err(_), Err(_)) => {}
            (a, b) => panic!("{text}: {a:?} vs {b:?}"),
        }
    }
}

// ---------------------------------------------------------------------------
// worked examples

fn run(db: &Database, text: &str) -> Denotation {
    execute(&text.parse().unwrap(), db).unwrap()
}

const PAPERS: &str = "(call getProperty (call singleton fb:en.paper) (string !type))";

#[test]
fn demo_superlative_and_filter() {
    let db = demo_db();
    let latest = run(
        &db,
        &format!("(call superlative {PAPERS} (string max) (string paper.publication_year))"),
    );
    assert_eq!(
        latest.into_iter().collect::<Vec<_>>(),
        vec![Value::entity("fb:en.paper.p2", "paper")]
    );
    let at_acl = run(
        &db,
        &format!("(call filter {PAPERS} (string paper.venue) (string =) fb:en.venue.acl)"),
    );
    assert_eq!(
        at_acl.into_iter().collect::<Vec<_>>(),
        vec![Value::entity("fb:en.paper.p1", "paper")]
    );
    let none = run(
        &db,
        &format!("(call count (call filter {PAPERS} (string paper.venue) (string =) fb:en.year.2014))"),
    );
    assert_eq!(none.into_iter().collect::<Vec<_>>(), vec![Value::number(0)]);
}

#[test]
fn count_superlative_picks_the_venue_with_most_papers_by_an_author() {
    let db = load_database(
        "(type paper (paper.venue venue) (paper.author author))
         (type venue) (type author)
         (entity fb:en.venue.acl venue) (entity fb:en.venue.naacl venue)
         (entity fb:en.author.x author) (entity fb:en.author.y author)
         (entity fb:en.paper.a paper) (entity fb:en.paper.b paper)
         (entity fb:en.paper.c paper) (entity fb:en.paper.d paper)
         (triple fb:en.paper.a paper.venue fb:en.venue.acl) (triple fb:en.paper.a paper.author fb:en.author.x)
         (triple fb:en.paper.b paper.venue fb:en.venue.acl) (triple fb:en.paper.b paper.author fb:en.author.x)
         (triple fb:en.paper.c paper.venue fb:en.venue.naacl) (triple fb:en.paper.c paper.author fb:en.author.x)
         (triple fb:en.paper.d paper.venue fb:en.venue.naacl) (triple fb:en.paper.d paper.author fb:en.author.y)
         (triple fb:en.paper.d paper.venue fb:en.venue.naacl)",
    )
    .unwrap();
    let by_x = format!("(call filter {PAPERS} (string paper.author) (string =) fb:en.author.x)");
    let venues = "(call getProperty (call singleton fb:en.venue) (string !type))";
    let got = run(
        &db,
        &format!("(call countSuperlative {venues} (string max) (string !paper.venue) {by_x})"),
    );
    assert_eq!(
        got.into_iter().collect::<Vec<_>>(),
        vec![Value::entity("fb:en.venue.acl", "venue")]
    );
    assert_eq!(
        Naive { db: &db }
            .eval(
                &format!("(call countSuperlative {venues} (string max) (string !paper.venue) {by_x})")
                    .parse()
                    .unwrap()
            )
            .unwrap(),
        vec![Value::entity("fb:en.venue.acl", "venue")]
    );
}

#[test]
fn demo_files_have_the_documented_shape() {
    let g = demo_grammar();
    assert_eq!(g.productions().len(), 16);
    assert!(g.validate().is_empty());
    let db = demo_db();
    let count = |ty: &str| db.instances_of(ty).count();
    assert_eq!((count("paper"), count("author"), count("venue")), (2, 1, 2));
    let ambiguous = parse_utterance(&g, &synthparse_core::tokenize("paper in 2014"), DEPTH);
    assert_eq!(ambiguous.len(), 2);
}
