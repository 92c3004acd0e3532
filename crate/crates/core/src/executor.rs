//! Typed in-memory database and the program executor.
//!
//! Database text format:
//!
//! ```text
//! (type paper (paper.venue venue) (paper.publication_year year) (paper.title text))
//! (type year)
//! (entity fb:en.paper.p1 paper)
//! (entity fb:en.year.2014 year 2014)      ; optional numeric payload
//! (triple fb:en.paper.p1 paper.venue fb:en.venue.acl)
//! (triple fb:en.paper.p1 paper.pages (number 12 pages))
//! (triple fb:en.paper.p1 paper.title "Some title")
//! ```
//!
//! Value kinds in a schema are an entity type name, `number`, or `text`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::program::{Program, Rational, ENTITY_PREFIX};
use crate::sexpr::{self, Pos, Sexp};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Entity {
        id: String,
        entity_type: String,
    },
    /// The type itself, as produced by `singleton`.
    Type(String),
    Number {
        value: Rational,
        unit: Option<String>,
    },
    Text(String),
}

impl Value {
    pub fn entity(id: &str, entity_type: &str) -> Value {
        Value::Entity {
            id: id.to_string(),
            entity_type: entity_type.to_string(),
        }
    }

    pub fn number(n: i64) -> Value {
        Value::Number {
            value: Rational::from_integer(n),
            unit: None,
        }
    }

    fn kind(&self) -> u8 {
        match self {
            Value::Entity { .. } | Value::Type(_) => 0,
            Value::Number { .. } => 1,
            Value::Text(_) => 2,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Entity { id, .. } => f.write_str(id),
            Value::Type(t) => write!(f, "{ENTITY_PREFIX}{t}"),
            Value::Number { value, unit: None } => write!(f, "{value}"),
            Value::Number { value, unit: Some(u) } => write!(f, "{value} {u}"),
            Value::Text(t) => write!(f, "{t:?}"),
        }
    }
}

/// A set of values; order and multiplicity are not observable.
pub type Denotation = BTreeSet<Value>;

/// Set equality; numbers compare exactly.
pub fn denotation_equal(a: &Denotation, b: &Denotation) -> bool {
    a == b
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ValueKind {
    Entity(String),
    Number,
    Text,
}

impl ValueKind {
    fn parse(s: &str) -> ValueKind {
        match s {
            "number" => ValueKind::Number,
            "text" => ValueKind::Text,
            t => ValueKind::Entity(t.to_string()),
        }
    }

    fn as_str(&self) -> &str {
        match self {
            ValueKind::Entity(t) => t,
            ValueKind::Number => "number",
            ValueKind::Text => "text",
        }
    }

    fn admits(&self, v: &Value) -> bool {
        match (self, v) {
            (ValueKind::Entity(t), Value::Entity { entity_type, .. }) => t == entity_type,
            (ValueKind::Number, Value::Number { .. }) => true,
            (ValueKind::Text, Value::Text(_)) => true,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DatabaseError {
    Syntax {
        pos: Pos,
        message: String,
    },
    UnknownType {
        pos: Pos,
        name: String,
    },
    UnknownEntity {
        pos: Pos,
        id: String,
    },
    DuplicateEntity {
        pos: Pos,
        id: String,
    },
    /// A triple that does not fit the schema.
    SchemaViolation {
        pos: Pos,
        triple: String,
        reason: String,
    },
}

impl fmt::Display for DatabaseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatabaseError::Syntax { pos, message } => write!(f, "{pos}: syntax error: {message}"),
            DatabaseError::UnknownType { pos, name } => write!(f, "{pos}: unknown type `{name}`"),
            DatabaseError::UnknownEntity { pos, id } => write!(f, "{pos}: unknown entity `{id}`"),
            DatabaseError::DuplicateEntity { pos, id } => write!(f, "{pos}: duplicate entity `{id}`"),
            DatabaseError::SchemaViolation { pos, triple, reason } => {
                write!(f, "{pos}: schema violation in {triple}: {reason}")
            }
        }
    }
}

impl core::error::Error for DatabaseError {}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Triple {
    pub subject: Value,
    pub property: String,
    pub object: Value,
}

#[derive(Clone, Debug, Default)]
pub struct Database {
    schema: BTreeMap<String, BTreeMap<String, ValueKind>>,
    entities: BTreeMap<String, (String, Option<Rational>)>,
    triples: Vec<Triple>,
    forward: BTreeMap<(Value, String), BTreeSet<Value>>,
    backward: BTreeMap<(Value, String), BTreeSet<Value>>,
    instances: BTreeMap<String, BTreeSet<Value>>,
    properties: BTreeSet<String>,
}

impl Database {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_type(&mut self, name: &str, props: impl IntoIterator<Item = (String, ValueKind)>) {
        let entry = self.schema.entry(name.to_string()).or_default();
        for (p, k) in props {
            self.properties.insert(p.clone());
            entry.insert(p, k);
        }
        self.instances.entry(name.to_string()).or_default();
    }

    pub fn add_entity(&mut self, id: &str, entity_type: &str, payload: Option<Rational>) -> Result<(), String> {
        if !self.schema.contains_key(entity_type) {
            return Err(format!("unknown type `{entity_type}`"));
        }
        if self.entities.contains_key(id) {
            return Err(format!("duplicate entity `{id}`"));
        }
        self.entities.insert(id.to_string(), (entity_type.to_string(), payload));
        self.instances
            .entry(entity_type.to_string())
            .or_default()
            .insert(Value::entity(id, entity_type));
        Ok(())
    }

    /// Adds a triple after checking it against the schema.
    pub fn add_triple(&mut self, subject: &str, property: &str, object: Value) -> Result<(), String> {
        let (ty, _) = self
            .entities
            .get(subject)
            .ok_or_else(|| format!("unknown subject `{subject}`"))?;
        let kind = self
            .schema
            .get(ty)
            .and_then(|props| props.get(property))
            .ok_or_else(|| format!("property `{property}` is not declared for type `{ty}`"))?;
        if let Value::Entity { id, .. } = &object {
            if !self.entities.contains_key(id) {
                return Err(format!("unknown object `{id}`"));
            }
        }
        if !kind.admits(&object) {
            return Err(format!(
                "object {object} does not match declared kind `{}`",
                kind.as_str()
            ));
        }
        let subject = Value::entity(subject, ty);
        self.forward
            .entry((subject.clone(), property.to_string()))
            .or_default()
            .insert(object.clone());
        self.backward
            .entry((object.clone(), property.to_string()))
            .or_default()
            .insert(subject.clone());
        self.triples.push(Triple {
            subject,
            property: property.to_string(),
            object,
        });
        Ok(())
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn instances_of(&self, entity_type: &str) -> impl Iterator<Item = &Value> {
        self.instances.get(entity_type).into_iter().flatten()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn types(&self) -> impl Iterator<Item = &str> {
        self.schema.keys().map(String::as_str)
    }

    pub fn has_property(&self, property: &str) -> bool {
        self.properties.contains(property)
    }

    /// Numeric view of a value: numbers, or entities with a numeric payload.
    pub fn numeric(&self, v: &Value) -> Option<Rational> {
        match v {
            Value::Number { value, .. } => Some(*value),
            Value::Entity { id, .. } => self.entities.get(id).and_then(|(_, n)| *n),
            _ => None,
        }
    }
}

fn db_syntax(pos: Pos, message: impl Into<String>) -> DatabaseError {
    DatabaseError::Syntax {
        pos,
        message: message.into(),
    }
}

fn parse_number(items: &[Sexp], pos: Pos) -> Result<Value, DatabaseError> {
    let text = items
        .get(1)
        .and_then(Sexp::as_atom)
        .ok_or_else(|| db_syntax(pos, "expected (number N [unit])"))?;
    let value = text
        .parse::<Rational>()
        .map_err(|_| db_syntax(pos, format!("invalid number `{text}`")))?;
    let unit = match items.get(2) {
        None => None,
        Some(Sexp::Atom(u, _)) if items.len() == 3 => Some(u.clone()),
        Some(_) => return Err(db_syntax(pos, "expected (number N [unit])")),
    };
    Ok(Value::Number { value, unit })
}

pub fn load_database(text: &str) -> Result<Database, DatabaseError> {
    let forms = sexpr::read_all(text).map_err(|e| db_syntax(e.pos, e.message))?;
    let mut db = Database::new();
    for form in &forms {
        let pos = form.pos();
        let items = form.as_list().ok_or_else(|| db_syntax(pos, "expected a record"))?;
        let atom = |i: usize| items.get(i).and_then(Sexp::as_atom);
        match atom(0) {
            Some("type") => {
                let name = atom(1).ok_or_else(|| db_syntax(pos, "expected type name"))?;
                let mut props = Vec::new();
                for decl in &items[2..] {
                    match decl.as_list() {
                        Some([Sexp::Atom(p, _), Sexp::Atom(k, _)]) => props.push((p.clone(), ValueKind::parse(k))),
                        _ => return Err(db_syntax(decl.pos(), "expected (<property> <valuekind>)")),
                    }
                }
                db.add_type(name, props);
            }
            Some("entity") => {
                let (Some(id), Some(ty)) = (atom(1), atom(2)) else {
                    return Err(db_syntax(pos, "expected (entity <id> <type> [payload])"));
                };
                if !db.schema.contains_key(ty) {
                    return Err(DatabaseError::UnknownType {
                        pos,
                        name: ty.to_string(),
                    });
                }
                match Program::entity(id) {
                    Ok(Program::Entity { entity_type, .. }) if entity_type == ty => {}
                    _ => {
                        return Err(db_syntax(
                            pos,
                            format!("entity id `{id}` must follow {ENTITY_PREFIX}{ty}.<name>"),
                        ))
                    }
                }
                let payload = match atom(3) {
                    None if items.len() == 3 => None,
                    Some(n) if items.len() == 4 => Some(
                        n.parse::<Rational>()
                            .map_err(|_| db_syntax(pos, format!("invalid payload `{n}`")))?,
                    ),
                    _ => return Err(db_syntax(pos, "expected (entity <id> <type> [payload])")),
                };
                db.add_entity(id, ty, payload)
                    .map_err(|_| DatabaseError::DuplicateEntity {
                        pos,
                        id: id.to_string(),
                    })?;
            }
            Some("triple") => {
                let (Some(subject), Some(prop), Some(obj)) = (atom(1), atom(2), items.get(3)) else {
                    return Err(db_syntax(pos, "expected (triple <subj> <prop> <obj>)"));
                };
                if items.len() != 4 {
                    return Err(db_syntax(pos, "expected (triple <subj> <prop> <obj>)"));
                }
                let object = match obj {
                    Sexp::Atom(id, p) => match db.entities.get(id.as_str()) {
                        Some((ty, _)) => Value::entity(id, ty),
                        None => {
                            return Err(DatabaseError::UnknownEntity {
                                pos: *p,
                                id: id.clone(),
                            })
                        }
                    },
                    Sexp::Str(t, _) => Value::Text(t.clone()),
                    Sexp::List(inner, p) if inner.first().and_then(Sexp::as_atom) == Some("number") => {
                        parse_number(inner, *p)?
                    }
                    Sexp::List(_, p) => return Err(db_syntax(*p, "expected entity id, (number ..) or text")),
                };
                if !db.entities.contains_key(subject) {
                    return Err(DatabaseError::UnknownEntity {
                        pos,
                        id: subject.to_string(),
                    });
                }
                let rendered = format!("(triple {subject} {prop} {object})");
                db.add_triple(subject, prop, object)
                    .map_err(|reason| DatabaseError::SchemaViolation {
                        pos,
                        triple: rendered,
                        reason,
                    })?;
            }
            _ => return Err(db_syntax(pos, "expected `type`, `entity` or `triple` record")),
        }
    }
    Ok(db)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ErrorReason {
    UnknownProperty,
    ComparatorTypeMismatch,
    SuperlativeOverNonnumeric,
    EmptySuperlativeInput,
    UnboundHead,
    /// Wrong argument count or shape, free variables, unapplied lambdas.
    Malformed,
}

impl ErrorReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorReason::UnknownProperty => "unknown-property",
            ErrorReason::ComparatorTypeMismatch => "comparator-type-mismatch",
            ErrorReason::SuperlativeOverNonnumeric => "superlative-over-nonnumeric",
            ErrorReason::EmptySuperlativeInput => "empty-superlative-input",
            ErrorReason::UnboundHead => "unbound-head",
            ErrorReason::Malformed => "malformed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecutionError {
    pub reason: ErrorReason,
    pub detail: String,
}

impl fmt::Display for ExecutionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.reason.as_str(), self.detail)
    }
}

impl core::error::Error for ExecutionError {}

fn fail<T>(reason: ErrorReason, detail: impl Into<String>) -> Result<T, ExecutionError> {
    Err(ExecutionError {
        reason,
        detail: detail.into(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Comparator {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

impl Comparator {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "=" => Comparator::Eq,
            "!=" => Comparator::Ne,
            "<" => Comparator::Lt,
            ">" => Comparator::Gt,
            "<=" => Comparator::Le,
            ">=" => Comparator::Ge,
            _ => return None,
        })
    }

    pub fn holds(self, ord: Ordering) -> bool {
        match self {
            Comparator::Eq => ord == Ordering::Equal,
            Comparator::Ne => ord != Ordering::Equal,
            Comparator::Lt => ord == Ordering::Less,
            Comparator::Gt => ord == Ordering::Greater,
            Comparator::Le => ord != Ordering::Greater,
            Comparator::Ge => ord != Ordering::Less,
        }
    }
}

/// Executes a closed program against `db`.
///
/// Operation vocabulary: `listValue`, `singleton`, `getProperty` (with `!p`
/// for the inverse of `p`, `type` and `!type`), `filter` with `= != < > <=
/// >=`, `superlative` and `countSuperlative` (modes `max`/`min`, ties all
/// returned), and `count`.
pub fn execute(program: &Program, db: &Database) -> Result<Denotation, ExecutionError> {
    Executor { db }.eval(program)
}

struct Executor<'a> {
    db: &'a Database,
}

impl Executor<'_> {
    fn eval(&self, p: &Program) -> Result<Denotation, ExecutionError> {
        let mut out = Denotation::new();
        match p {
            Program::Str(s) => {
                out.insert(Value::Text(s.clone()));
            }
            Program::Number(q) => {
                out.insert(Value::Number { value: *q, unit: None });
            }
            Program::Entity { id, entity_type } => {
                out.insert(Value::entity(id, entity_type));
            }
            Program::Type(t) => {
                out.insert(Value::Type(t.clone()));
            }
            Program::Var(v) => return fail(ErrorReason::Malformed, format!("free variable `{v}`")),
            Program::Lambda { .. } => return fail(ErrorReason::Malformed, "unapplied lambda"),
            Program::Call { head, args } => return self.call(head, args),
        }
        Ok(out)
    }

    fn text_arg(&self, p: &Program) -> Result<String, ExecutionError> {
        let d = self.eval(p)?;
        match (d.len(), d.first()) {
            (1, Some(Value::Text(t))) => Ok(t.clone()),
            _ => fail(ErrorReason::Malformed, format!("expected a string argument, got {p}")),
        }
    }

    fn arity(head: &str, args: &[Program], n: usize) -> Result<(), ExecutionError> {
        if args.len() == n {
            Ok(())
        } else {
            fail(
                ErrorReason::Malformed,
                format!("`{head}` takes {n} arguments, got {}", args.len()),
            )
        }
    }

    fn call(&self, head: &str, args: &[Program]) -> Result<Denotation, ExecutionError> {
        match head {
            "listValue" | "singleton" => {
                Self::arity(head, args, 1)?;
                self.eval(&args[0])
            }
            "count" => {
                Self::arity(head, args, 1)?;
                let set = self.eval(&args[0])?;
                let mut out = Denotation::new();
                out.insert(Value::number(set.len() as i64));
                Ok(out)
            }
            "getProperty" => {
                Self::arity(head, args, 2)?;
                let subjects = self.eval(&args[0])?;
                let prop = self.text_arg(&args[1])?;
                self.get_property(&subjects, &prop)
            }
            "filter" => {
                Self::arity(head, args, 4)?;
                let subjects = self.eval(&args[0])?;
                let rel = self.text_arg(&args[1])?;
                let cmp_text = self.text_arg(&args[2])?;
                let cmp = Comparator::parse(&cmp_text).ok_or_else(|| ExecutionError {
                    reason: ErrorReason::Malformed,
                    detail: format!("unknown comparator `{cmp_text}`"),
                })?;
                let objects = self.eval(&args[3])?;
                self.filter(&subjects, &rel, cmp, &objects)
            }
            "superlative" => {
                Self::arity(head, args, 3)?;
                let subjects = self.eval(&args[0])?;
                let max = self.mode(&args[1])?;
                let rel = self.text_arg(&args[2])?;
                self.superlative(&subjects, max, &rel)
            }
            "countSuperlative" => {
                Self::arity(head, args, 4)?;
                let subjects = self.eval(&args[0])?;
                let max = self.mode(&args[1])?;
                let rel = self.text_arg(&args[2])?;
                let pool = self.eval(&args[3])?;
                self.count_superlative(&subjects, max, &rel, &pool)
            }
            other => fail(ErrorReason::UnboundHead, format!("unknown operation `{other}`")),
        }
    }

    fn mode(&self, p: &Program) -> Result<bool, ExecutionError> {
        match self.text_arg(p)?.as_str() {
            "max" => Ok(true),
            "min" => Ok(false),
            other => fail(ErrorReason::Malformed, format!("unknown superlative mode `{other}`")),
        }
    }

    fn check_property(&self, prop: &str) -> Result<(), ExecutionError> {
        let base = prop.strip_prefix('!').unwrap_or(prop);
        if base == "type" || self.db.has_property(base) {
            Ok(())
        } else {
            fail(ErrorReason::UnknownProperty, format!("`{prop}`"))
        }
    }

    fn values_of(&self, subject: &Value, prop: &str) -> Denotation {
        let db = self.db;
        match prop {
            "type" => match subject {
                Value::Entity { entity_type, .. } => [Value::Type(entity_type.clone())].into_iter().collect(),
                _ => Denotation::new(),
            },
            "!type" => match subject {
                Value::Type(t) => db.instances_of(t).cloned().collect(),
                _ => Denotation::new(),
            },
            _ => {
                let (index, base) = match prop.strip_prefix('!') {
                    Some(base) => (&db.backward, base),
                    None => (&db.forward, prop),
                };
                index
                    .get(&(subject.clone(), base.to_string()))
                    .cloned()
                    .unwrap_or_default()
            }
        }
    }

    fn get_property(&self, subjects: &Denotation, prop: &str) -> Result<Denotation, ExecutionError> {
        self.check_property(prop)?;
        Ok(subjects.iter().flat_map(|s| self.values_of(s, prop)).collect())
    }

    fn compare(&self, a: &Value, b: &Value, cmp: Comparator) -> Result<bool, ExecutionError> {
        match cmp {
            Comparator::Eq => Ok(a == b),
            Comparator::Ne => Ok(a != b),
            _ => match (self.db.numeric(a), self.db.numeric(b)) {
                (Some(x), Some(y)) => Ok(cmp.holds(x.cmp(&y))),
                _ => fail(
                    ErrorReason::ComparatorTypeMismatch,
                    format!("cannot order {a} against {b}"),
                ),
            },
        }
    }

    fn filter(
        &self,
        subjects: &Denotation,
        rel: &str,
        cmp: Comparator,
        objects: &Denotation,
    ) -> Result<Denotation, ExecutionError> {
        self.check_property(rel)?;
        let mut out = Denotation::new();
        for s in subjects {
            let values = self.values_of(s, rel);
            let keep = match cmp {
                // `!=`: has the relation, and no value equals the object
                Comparator::Ne => !values.is_empty() && !values.iter().any(|v| objects.contains(v)),
                Comparator::Eq => values.iter().any(|v| objects.contains(v)),
                _ => {
                    let mut any = false;
                    for v in &values {
                        for o in objects {
                            if self.compare(v, o, cmp)? {
                                any = true;
                            }
                        }
                    }
                    any
                }
            };
            if keep {
                out.insert(s.clone());
            }
        }
        Ok(out)
    }

    fn superlative(&self, subjects: &Denotation, max: bool, rel: &str) -> Result<Denotation, ExecutionError> {
        self.check_property(rel)?;
        if subjects.is_empty() {
            return fail(ErrorReason::EmptySuperlativeInput, "superlative over an empty set");
        }
        let mut scored = Vec::new();
        for s in subjects {
            let mut best: Option<Rational> = None;
            for v in self.values_of(s, rel) {
                let Some(n) = self.db.numeric(&v) else {
                    return fail(ErrorReason::SuperlativeOverNonnumeric, format!("{v} via `{rel}`"));
                };
                best = Some(match best {
                    Some(b) if (max && b >= n) || (!max && b <= n) => b,
                    _ => n,
                });
            }
            if let Some(b) = best {
                scored.push((s, b));
            }
        }
        Ok(extremes(scored, max))
    }

    fn count_superlative(
        &self,
        subjects: &Denotation,
        max: bool,
        rel: &str,
        pool: &Denotation,
    ) -> Result<Denotation, ExecutionError> {
        self.check_property(rel)?;
        if subjects.is_empty() {
            return fail(ErrorReason::EmptySuperlativeInput, "countSuperlative over an empty set");
        }
        let scored = subjects
            .iter()
            .map(|s| {
                let n = self.values_of(s, rel).intersection(pool).count();
                (s, Rational::from_integer(n as i64))
            })
            .collect();
        Ok(extremes(scored, max))
    }
}

fn extremes(scored: Vec<(&Value, Rational)>, max: bool) -> Denotation {
    let target = if max {
        scored.iter().map(|(_, n)| *n).max()
    } else {
        scored.iter().map(|(_, n)| *n).min()
    };
    scored
        .into_iter()
        .filter(|(_, n)| Some(*n) == target)
        .map(|(s, _)| s.clone())
        .collect()
}

/// True when every value in the denotation has the same kind.
pub fn is_homogeneous(d: &Denotation) -> bool {
    let mut kinds = d.iter().map(Value::kind);
    match kinds.next() {
        Some(k) => kinds.all(|x| x == k),
        None => true,
    }
}
