//! Dataset JSONL, input loading with digests, and atomic file writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use synthparse_core::executor::{load_database, Database};
use synthparse_core::grammar::{load_grammar, Grammar};
use synthparse_core::program::parse_program;
use synthparse_core::{tokenize, Dataset, DatasetName, Example, Provenance};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProvenanceRecord {
    Canonical,
    Paraphrased { source: String, iteration: u32 },
    Validation,
}

impl From<&Provenance> for ProvenanceRecord {
    fn from(p: &Provenance) -> Self {
        match p {
            Provenance::Canonical => ProvenanceRecord::Canonical,
            Provenance::Paraphrased { source, iteration } => ProvenanceRecord::Paraphrased {
                source: source.clone(),
                iteration: *iteration,
            },
            Provenance::Validation => ProvenanceRecord::Validation,
        }
    }
}

impl From<ProvenanceRecord> for Provenance {
    fn from(p: ProvenanceRecord) -> Self {
        match p {
            ProvenanceRecord::Canonical => Provenance::Canonical,
            ProvenanceRecord::Paraphrased { source, iteration } => Provenance::Paraphrased { source, iteration },
            ProvenanceRecord::Validation => Provenance::Validation,
        }
    }
}

/// One JSONL line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleRecord {
    pub id: String,
    pub utterance: String,
    pub program: String,
    pub depth: u32,
    pub template: String,
    pub score: Option<f64>,
    pub provenance: ProvenanceRecord,
}

impl From<&Example> for ExampleRecord {
    fn from(e: &Example) -> Self {
        ExampleRecord {
            id: e.id.clone(),
            utterance: e.text(),
            program: e.program.render(),
            depth: e.depth,
            template: e.template.as_str().to_string(),
            score: e.score,
            provenance: (&e.provenance).into(),
        }
    }
}

impl ExampleRecord {
    pub fn into_example(self) -> std::result::Result<Example, String> {
        let program = parse_program(&self.program).map_err(|e| format!("program: {e}"))?;
        let mut ex = Example::new(
            self.id,
            tokenize(&self.utterance),
            program,
            self.depth,
            self.provenance.into(),
        )
        .map_err(|e| format!("program: {e}"))?;
        if ex.template.as_str() != self.template {
            return Err(format!(
                "template `{}` does not match the program (expected `{}`)",
                self.template,
                ex.template.as_str()
            ));
        }
        if self.depth == 0 {
            return Err("depth must be at least 1".into());
        }
        if let Some(s) = self.score {
            if !s.is_finite() {
                return Err("score must be finite".into());
            }
        }
        ex.score = self.score;
        Ok(ex)
    }
}

pub fn to_jsonl(dataset: &Dataset) -> String {
    let mut out = String::new();
    for e in dataset {
        out.push_str(&serde_json::to_string(&ExampleRecord::from(e)).expect("records always serialize"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str, name: DatasetName) -> std::result::Result<Dataset, String> {
    let mut examples = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExampleRecord = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", n + 1))?;
        examples.push(rec.into_example().map_err(|e| format!("line {}: {e}", n + 1))?);
    }
    Dataset::from_examples(name, examples).map_err(|e| e.to_string())
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    write_atomic(path, to_jsonl(dataset).as_bytes())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Bytes of a consumed input file plus their digest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: usize,
    #[serde(skip)]
    pub text: String,
}

pub fn read_input(path: &Path) -> Result<InputFile> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let sha256 = sha256_hex(&raw);
    let bytes = raw.len();
    let text = String::from_utf8(raw).map_err(|_| Error::load(path, "not valid UTF-8"))?;
    Ok(InputFile {
        path: path.to_path_buf(),
        sha256,
        bytes,
        text,
    })
}

pub fn read_grammar(path: &Path) -> Result<(Grammar, InputFile)> {
    let input = read_input(path)?;
    let g = load_grammar(&input.text).map_err(|e| Error::load(path, e))?;
    Ok((g, input))
}

pub fn read_database(path: &Path) -> Result<(Database, InputFile)> {
    let input = read_input(path)?;
    let db = load_database(&input.text).map_err(|e| Error::load(path, e))?;
    Ok((db, input))
}

pub fn read_dataset(path: &Path, name: DatasetName) -> Result<(Dataset, InputFile)> {
    let input = read_input(path)?;
    let d = from_jsonl(&input.text, name).map_err(|e| Error::load(path, e))?;
    Ok((d, input))
}

/// One utterance per non-blank line.
pub fn read_corpus(path: &Path) -> Result<(Vec<Vec<String>>, InputFile)> {
    let input = read_input(path)?;
    let corpus = input
        .text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(tokenize)
        .collect();
    Ok((corpus, input))
}

/// Resolves `p` against `base` unless it is absolute.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
