use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::program::{Program, TemplateKey};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Provenance {
    Canonical,
    Paraphrased { source: String, iteration: u32 },
    Validation,
}

/// One utterance/program pair flowing through synthesis, selection and
/// paraphrasing.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub utterance: Vec<String>,
    pub program: Program,
    /// Number of production applications in the derivation.
    pub depth: u32,
    pub template: TemplateKey,
    /// Total natural-log probability of the utterance.
    pub score: Option<f64>,
    pub provenance: Provenance,
}

impl Example {
    /// Builds an example, deriving the template key from the program.
    pub fn new(
        id: impl Into<String>,
        utterance: Vec<String>,
        program: Program,
        depth: u32,
        provenance: Provenance,
    ) -> Result<Example, crate::program::ProgramError> {
        let template = program.template_key()?;
        Ok(Example {
            id: id.into(),
            utterance,
            program,
            depth,
            template,
            score: None,
            provenance,
        })
    }

    pub fn text(&self) -> String {
        self.utterance.join(" ")
    }

    /// Identity used for deduplication: utterance plus rendered program.
    pub fn key(&self) -> (String, String) {
        (self.text(), self.program.render())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetName {
    Canonical,
    Paraphrased,
    Validation,
    Natural,
    Other,
}

impl DatasetName {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Canonical => "D_can",
            DatasetName::Paraphrased => "D_par",
            DatasetName::Validation => "D_val",
            DatasetName::Natural => "D_nat",
            DatasetName::Other => "other",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DuplicateId(pub String);

impl fmt::Display for DuplicateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "duplicate example id `{}`", self.0)
    }
}

impl core::error::Error for DuplicateId {}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: DatasetName,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(name: DatasetName) -> Self {
        Dataset {
            name,
            examples: Vec::new(),
        }
    }

    /// Wraps examples, rejecting repeated ids.
    pub fn from_examples(name: DatasetName, examples: Vec<Example>) -> Result<Self, DuplicateId> {
        let mut seen = BTreeSet::new();
        for e in &examples {
            if !seen.insert(e.id.as_str()) {
                return Err(DuplicateId(e.id.to_string()));
            }
        }
        Ok(Dataset { name, examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Example> {
        self.examples.iter()
    }

    pub fn templates(&self) -> BTreeSet<&TemplateKey> {
        self.examples.iter().map(|e| &e.template).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.examples.iter().find(|e| e.id == id)
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Example;
    type IntoIter = core::slice::Iter<'a, Example>;

    fn into_iter(self) -> Self::IntoIter {
        self.examples.iter()
    }
}
