//! Lambda-calculus programs over s-expressions.
//!
//! The rendered string is the canonical encoding of a program everywhere in
//! the toolkit (datasets, manifests, wire formats):
//!
//! ```text
//! (call <head> <arg>...)     Call
//! (string <atom>)            StringLit; quoted as (string "...") when needed
//! (number <n>[/<d>])         exact rational
//! fb:en.<type>.<name>        EntityRef
//! fb:en.<type>               TypeRef (argument of `singleton`)
//! (var <name>)               Var
//! (lambda <name> <body>)     Lambda
//! ```

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use num_rational::Ratio;

use crate::sexpr::{self, Pos, ReadError, Sexp};

pub type Rational = Ratio<i64>;

pub const ENTITY_PREFIX: &str = "fb:en.";

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Program {
    Call {
        head: String,
        args: Vec<Program>,
    },
    Str(String),
    Number(Rational),
    Entity {
        id: String,
        entity_type: String,
    },
    /// A type constant such as `fb:en.paper`.
    Type(String),
    Var(String),
    Lambda {
        param: String,
        body: Box<Program>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProgramError {
    Read(ReadError),
    UnknownForm { pos: Pos, form: String },
    InvalidEntity(String),
    NotLambda(String),
    OpenTerm(String),
}

impl fmt::Display for ProgramError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProgramError::Read(e) => write!(f, "{e}"),
            ProgramError::UnknownForm { pos, form } => write!(f, "{pos}: unknown atom form `{form}`"),
            ProgramError::InvalidEntity(id) => write!(f, "invalid entity reference `{id}`"),
            ProgramError::NotLambda(p) => write!(f, "beta reduction of a non-lambda: {p}"),
            ProgramError::OpenTerm(v) => write!(f, "program has free variable `{v}`"),
        }
    }
}

impl core::error::Error for ProgramError {}

impl From<ReadError> for ProgramError {
    fn from(e: ReadError) -> Self {
        ProgramError::Read(e)
    }
}

/// Rendered program with entities replaced by typed, per-type indexed slots
/// (`venue0`, `venue1`, `year0`, ...).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TemplateKey(String);

impl TemplateKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Wraps an already-computed key, e.g. one read back from disk.
    pub fn from_raw(key: impl Into<String>) -> Self {
        TemplateKey(key.into())
    }
}

impl fmt::Display for TemplateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn valid_name(s: &str) -> bool {
    sexpr::is_bare_atom(s) && !s.starts_with('#') && !s.starts_with(ENTITY_PREFIX)
}

impl Program {
    pub fn call(head: impl Into<String>, args: Vec<Program>) -> Program {
        Program::Call {
            head: head.into(),
            args,
        }
    }

    pub fn string(text: impl Into<String>) -> Program {
        Program::Str(text.into())
    }

    pub fn number(n: i64) -> Program {
        Program::Number(Rational::from_integer(n))
    }

    pub fn var(name: impl Into<String>) -> Program {
        Program::Var(name.into())
    }

    pub fn lambda(param: impl Into<String>, body: Program) -> Program {
        Program::Lambda {
            param: param.into(),
            body: Box::new(body),
        }
    }

    pub fn type_ref(name: impl Into<String>) -> Program {
        Program::Type(name.into())
    }

    /// Builds an entity reference from an `fb:en.<type>.<name>` id.
    pub fn entity(id: &str) -> Result<Program, ProgramError> {
        match parse_ref(id) {
            Some(p @ Program::Entity { .. }) => Ok(p),
            _ => Err(ProgramError::InvalidEntity(id.to_string())),
        }
    }

    pub fn head(&self) -> Option<&str> {
        match self {
            Program::Call { head, .. } => Some(head),
            _ => None,
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        self.write(&mut out, &mut |id, _, out| out.push_str(id));
        out
    }

    fn write(&self, out: &mut String, entity: &mut dyn FnMut(&str, &str, &mut String)) {
        match self {
            Program::Call { head, args } => {
                out.push_str("(call ");
                out.push_str(head);
                for a in args {
                    out.push(' ');
                    a.write(out, entity);
                }
                out.push(')');
            }
            Program::Str(text) => {
                out.push_str("(string ");
                if sexpr::is_bare_atom(text) {
                    out.push_str(text);
                } else {
                    sexpr::write_quoted(out, text);
                }
                out.push(')');
            }
            Program::Number(q) => {
                out.push_str("(number ");
                out.push_str(&q.to_string());
                out.push(')');
            }
            Program::Entity { id, entity_type } => entity(id, entity_type, out),
            Program::Type(name) => {
                out.push_str(ENTITY_PREFIX);
                out.push_str(name);
            }
            Program::Var(name) => {
                out.push_str("(var ");
                out.push_str(name);
                out.push(')');
            }
            Program::Lambda { param, body } => {
                out.push_str("(lambda ");
                out.push_str(param);
                out.push(' ');
                body.write(out, entity);
                out.push(')');
            }
        }
    }

    /// Number of AST nodes.
    pub fn size(&self) -> usize {
        match self {
            Program::Call { args, .. } => 1 + args.iter().map(Program::size).sum::<usize>(),
            Program::Lambda { body, .. } => 1 + body.size(),
            _ => 1,
        }
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free<'a>(&'a self, bound: &mut Vec<&'a str>, out: &mut BTreeSet<String>) {
        match self {
            Program::Var(n) => {
                if !bound.contains(&n.as_str()) {
                    out.insert(n.clone());
                }
            }
            Program::Lambda { param, body } => {
                bound.push(param);
                body.collect_free(bound, out);
                bound.pop();
            }
            Program::Call { args, .. } => {
                for a in args {
                    a.collect_free(bound, out);
                }
            }
            _ => {}
        }
    }

    pub fn is_closed(&self) -> bool {
        self.free_vars().is_empty()
    }

    /// Simultaneous capture-avoiding substitution of free variables.
    pub fn substitute(&self, map: &BTreeMap<String, Program>) -> Program {
        if map.is_empty() {
            return self.clone();
        }
        match self {
            Program::Var(n) => map.get(n).cloned().unwrap_or_else(|| self.clone()),
            Program::Call { head, args } => Program::Call {
                head: head.clone(),
                args: args.iter().map(|a| a.substitute(map)).collect(),
            },
            Program::Lambda { param, body } => {
                let body_free = body.free_vars();
                let inner: BTreeMap<String, Program> = map
                    .iter()
                    .filter(|(k, _)| *k != param && body_free.contains(*k))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect();
                if inner.is_empty() {
                    return self.clone();
                }
                let incoming: BTreeSet<String> = inner.values().flat_map(Program::free_vars).collect();
                if incoming.contains(param) {
                    let mut avoid = incoming;
                    avoid.extend(body_free);
                    avoid.extend(inner.keys().cloned());
                    let fresh = fresh_name(param, &avoid);
                    let mut rename = BTreeMap::new();
                    rename.insert(param.clone(), Program::Var(fresh.clone()));
                    let renamed = body.substitute(&rename);
                    Program::lambda(fresh, renamed.substitute(&inner))
                } else {
                    Program::lambda(param.clone(), body.substitute(&inner))
                }
            }
            _ => self.clone(),
        }
    }

    /// Renames every lambda parameter to `x<depth>` so that alpha-equivalent
    /// programs are structurally equal.
    pub fn alpha_normalize(&self) -> Program {
        let free = self.free_vars();
        let mut prefix = String::from("x");
        while free.iter().any(|v| {
            v.strip_prefix(prefix.as_str())
                .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
        }) {
            prefix.push('_');
        }
        self.rename_binders(&prefix, &mut Vec::new())
    }

    fn rename_binders(&self, prefix: &str, env: &mut Vec<(String, String)>) -> Program {
        match self {
            Program::Var(n) => match env.iter().rev().find(|(old, _)| old == n) {
                Some((_, new)) => Program::Var(new.clone()),
                None => self.clone(),
            },
            Program::Lambda { param, body } => {
                let new = format!("{prefix}{}", env.len());
                env.push((param.clone(), new.clone()));
                let body = body.rename_binders(prefix, env);
                env.pop();
                Program::lambda(new, body)
            }
            Program::Call { head, args } => Program::Call {
                head: head.clone(),
                args: args.iter().map(|a| a.rename_binders(prefix, env)).collect(),
            },
            _ => self.clone(),
        }
    }

    pub fn template_key(&self) -> Result<TemplateKey, ProgramError> {
        if let Some(v) = self.free_vars().into_iter().next() {
            return Err(ProgramError::OpenTerm(v));
        }
        let normalized = self.alpha_normalize();
        let mut slots: BTreeMap<String, String> = BTreeMap::new();
        let mut per_type: BTreeMap<String, usize> = BTreeMap::new();
        let mut out = String::new();
        normalized.write(&mut out, &mut |id, ty, out| {
            let slot = slots.entry(id.to_string()).or_insert_with(|| {
                let n = per_type.entry(ty.to_string()).or_insert(0);
                let slot = format!("{ty}{n}");
                *n += 1;
                slot
            });
            out.push_str(slot);
        });
        Ok(TemplateKey(out))
    }

    /// Every entity referenced, in left-to-right order (with repeats).
    pub fn entities(&self) -> Vec<(&str, &str)> {
        let mut out = Vec::new();
        self.visit(&mut |p| {
            if let Program::Entity { id, entity_type } = p {
                out.push((id.as_str(), entity_type.as_str()));
            }
        });
        out
    }

    /// Pre-order traversal.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Program)) {
        f(self);
        match self {
            Program::Call { args, .. } => {
                for a in args {
                    a.visit(f);
                }
            }
            Program::Lambda { body, .. } => body.visit(f),
            _ => {}
        }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for Program {
    type Err = ProgramError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_program(s)
    }
}

fn fresh_name(base: &str, avoid: &BTreeSet<String>) -> String {
    (1..)
        .map(|k| format!("{base}_{k}"))
        .find(|n| !avoid.contains(n))
        .expect("unbounded name supply")
}

/// Applies `func` (a lambda) to `arg`.
pub fn beta_reduce(func: &Program, arg: &Program) -> Result<Program, ProgramError> {
    match func {
        Program::Lambda { param, body } => {
            let mut map = BTreeMap::new();
            map.insert(param.clone(), arg.clone());
            Ok(body.substitute(&map))
        }
        other => Err(ProgramError::NotLambda(other.render())),
    }
}

fn parse_ref(atom: &str) -> Option<Program> {
    let rest = atom.strip_prefix(ENTITY_PREFIX)?;
    if !sexpr::is_bare_atom(atom) {
        return None;
    }
    match rest.split_once('.') {
        Some((ty, name)) if !ty.is_empty() && !name.is_empty() => Some(Program::Entity {
            id: atom.to_string(),
            entity_type: ty.to_string(),
        }),
        Some(_) => None,
        None if !rest.is_empty() => Some(Program::Type(rest.to_string())),
        None => None,
    }
}

pub fn parse_program(s: &str) -> Result<Program, ProgramError> {
    let sexp = sexpr::read_one(s)?;
    from_sexp(&sexp, false)
}

/// Converts a read s-expression into a program. With `allow_slots`, bare
/// `#<n>` atoms become child-slot placeholders (used by grammar templates).
pub fn from_sexp(sexp: &Sexp, allow_slots: bool) -> Result<Program, ProgramError> {
    let unknown = |s: &Sexp, form: &str| ProgramError::UnknownForm {
        pos: s.pos(),
        form: form.to_string(),
    };
    match sexp {
        Sexp::Atom(a, _) => {
            if allow_slots && is_slot(a) {
                return Ok(Program::Var(a.clone()));
            }
            parse_ref(a).ok_or_else(|| unknown(sexp, a))
        }
        Sexp::Str(s, _) => Err(unknown(sexp, s)),
        Sexp::List(items, _) => {
            let Some(tag) = items.first().and_then(Sexp::as_atom) else {
                return Err(unknown(sexp, "list without a form tag"));
            };
            let name_at = |i: usize| -> Option<&str> { items.get(i).and_then(Sexp::as_atom) };
            match (tag, items.len()) {
                ("call", n) if n >= 2 => {
                    let head = name_at(1)
                        .filter(|h| valid_name(h))
                        .ok_or_else(|| unknown(sexp, "call head"))?;
                    let args = items[2..]
                        .iter()
                        .map(|a| from_sexp(a, allow_slots))
                        .collect::<Result<_, _>>()?;
                    Ok(Program::call(head, args))
                }
                ("string", 2) => match &items[1] {
                    Sexp::Atom(a, _) | Sexp::Str(a, _) => Ok(Program::Str(a.clone())),
                    other => Err(unknown(other, "string payload")),
                },
                ("number", 2) => {
                    let text = name_at(1).ok_or_else(|| unknown(sexp, "number payload"))?;
                    text.parse::<Rational>()
                        .map(Program::Number)
                        .map_err(|_| unknown(&items[1], text))
                }
                ("var", 2) => {
                    let name = name_at(1).ok_or_else(|| unknown(sexp, "var name"))?;
                    if valid_name(name) {
                        Ok(Program::Var(name.to_string()))
                    } else {
                        Err(unknown(&items[1], name))
                    }
                }
                ("lambda", 3) => {
                    let param = name_at(1)
                        .filter(|p| valid_name(p))
                        .ok_or_else(|| unknown(sexp, "lambda parameter"))?;
                    Ok(Program::lambda(param, from_sexp(&items[2], allow_slots)?))
                }
                (other, _) => Err(unknown(sexp, other)),
            }
        }
    }
}

pub(crate) fn is_slot(atom: &str) -> bool {
    atom.strip_prefix('#')
        .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
}

pub(crate) fn slot_index(name: &str) -> Option<usize> {
    if is_slot(name) {
        name[1..].parse().ok()
    } else {
        None
    }
}
