//! Helpers shared by the integration tests: paths to the demo files, a
//! runner for the binary, and naive reference implementations of
//! enumeration and execution.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Output;

use synthparse_core::executor::{Database, Value};
use synthparse_core::grammar::{parse_utterance, Grammar, RhsItem, SemanticFn};
use synthparse_core::program::{Program, Rational};
use synthparse_core::tokenize;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn data(name: &str) -> PathBuf {
    data_dir().join(name)
}

pub fn bin<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    std::process::Command::new(env!("CARGO_BIN_EXE_synthparse"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Parses a JSONL file into its lines as JSON values.
pub fn jsonl(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Runs `pipeline <config> --run-dir <run>`.
pub fn pipeline(config: &Path, run: &Path) -> Output {
    bin(["pipeline", config.to_str().unwrap(), "--run-dir", run.to_str().unwrap()])
}

/// Every file under `dir` keyed by its relative path, lock files excluded.
pub fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                if !rel.ends_with(".lock") {
                    out.insert(rel, std::fs::read(&path).unwrap());
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// The run manifest with its wall-clock section removed.
pub fn manifest_without_timing(run: &Path) -> serde_json::Value {
    let mut m: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("manifest.json")).unwrap()).unwrap();
    m.as_object_mut().unwrap().remove("timing");
    m
}

pub fn templates(path: &Path) -> BTreeSet<String> {
    jsonl(path)
        .iter()
        .map(|l| l["template"].as_str().unwrap().to_string())
        .collect()
}

/// Re-parses every accepted paraphrase of a run with the chart parser.
/// Returns how many were checked, or the first one that fails.
pub fn check_accepted(run: &Path, g: &Grammar, depth: u32) -> Result<usize, String> {
    let mut checked = 0;
    for (rel, _) in files(run) {
        if !rel.ends_with("accepted.jsonl") {
            continue;
        }
        for l in jsonl(&run.join(&rel)) {
            let utterance = l["utterance"].as_str().unwrap();
            let template = l["template"].as_str().unwrap();
            let parses = parse_utterance(g, &tokenize(utterance), depth);
            if !parses.iter().any(|p| p.template_key().unwrap().as_str() == template) {
                return Err(format!("{rel}: `{utterance}` does not parse to {template}"));
            }
            checked += 1;
        }
    }
    Ok(checked)
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
pub fn canon(p: &Program, env: &mut Vec<String>) -> String {
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

pub type Derivation = (Vec<String>, Program, u32);

/// Every derivation of `cat` using at most `budget` rule applications.
pub fn derive(g: &Grammar, cat: &str, budget: u32) -> Vec<Derivation> {
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

// ---------------------------------------------------------------------------
// naive interpreter: linear scans of the triple list, no indexes

#[derive(Debug, PartialEq)]
pub enum NaiveError {
    UnknownProperty,
    Mismatch,
    NonNumeric,
    EmptySuperlative,
    Unbound,
    Malformed,
}

pub struct Naive<'a> {
    pub db: &'a Database,
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

    pub fn eval(&self, p: &Program) -> Result<Vec<Value>, NaiveError> {
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
