// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::KbError;

/// A `(subject, predicate, object)` fact. Fields are trimmed, non-empty and
/// free of tabs and newlines.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl Triple {
    pub fn new(
        subject: impl Into<String>,
        predicate: impl Into<String>,
        object: impl Into<String>,
    ) -> Result<Self, KbError> {
        let check = |field: String| -> Result<String, KbError> {
            let trimmed = field.trim();
            if trimmed.is_empty() {
                return Err(KbError::InvalidTriple("empty field".into()));
            }
            if trimmed.contains(['\t', '\n', '\r']) {
                return Err(KbError::InvalidTriple(format!(
                    "field {trimmed:?} contains a tab or newline"
                )));
            }
            Ok(trimmed.to_string())
        };
        Ok(Triple {
            subject: check(subject.into())?,
            predicate: check(predicate.into())?,
            object: check(object.into())?,
        })
    }
}

/// Deduplicated triples with `(s, p) → objects` and `(p, o) → subjects`
/// indices. Lists keep first-insertion order.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    triples: Vec<Triple>,
    by_subject_predicate: HashMap<(String, String), Vec<String>>,
    by_predicate_object: HashMap<(String, String), Vec<String>>,
    predicates_by_subject: HashMap<String, Vec<String>>,
    entities: BTreeSet<String>,
}

impl KnowledgeBase {
    pub fn from_triples(triples: impl IntoIterator<Item = Triple>) -> Self {
        let mut seen = HashSet::new();
        let mut kb = KnowledgeBase::default();
        for t in triples {
            if !seen.insert(t.clone()) {
                continue;
            }
            kb.by_subject_predicate
                .entry((t.subject.clone(), t.predicate.clone()))
                .or_default()
                .push(t.object.clone());
            kb.by_predicate_object
                .entry((t.predicate.clone(), t.object.clone()))
                .or_default()
                .push(t.subject.clone());
            let preds = kb
                .predicates_by_subject
                .entry(t.subject.clone())
                .or_default();
            if !preds.contains(&t.predicate) {
                preds.push(t.predicate.clone());
            }
            kb.triples.push(t);
        }
        let subjects: HashSet<&str> = kb.triples.iter().map(|t| t.subject.as_str()).collect();
        kb.entities = kb
            .triples
            .iter()
            .flat_map(|t| [&t.subject, &t.object])
            .filter(|e| subjects.contains(e.as_str()))
            .cloned()
            .collect();
        kb
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Subjects, plus objects that also occur as subjects.
    pub fn entities(&self) -> &BTreeSet<String> {
        &self.entities
    }

    pub fn objects(&self, subject: &str, predicate: &str) -> &[String] {
        self.by_subject_predicate
            .get(&(subject.to_string(), predicate.to_string()))
            .map_or(&[], Vec::as_slice)
    }

    pub fn subjects(&self, predicate: &str, object: &str) -> &[String] {
        self.by_predicate_object
            .get(&(predicate.to_string(), object.to_string()))
            .map_or(&[], Vec::as_slice)
    }

    /// Distinct predicates leaving `subject`, first-insertion order.
    pub fn predicates_of(&self, subject: &str) -> &[String] {
        self.predicates_by_subject
            .get(subject)
            .map_or(&[], Vec::as_slice)
    }

    /// Every distinct predicate, first-insertion order.
    pub fn predicates(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.triples
            .iter()
            .filter(|t| seen.insert(t.predicate.as_str()))
            .map(|t| t.predicate.clone())
            .collect()
    }
}

/// Read a UTF-8 TSV file, one triple per line. Blank lines and lines starting
/// with `#` are skipped.
pub fn load_triples(path: &Path) -> Result<KnowledgeBase, KbError> {
    let text = fs::read_to_string(path)?;
    parse_triples(&text).map(KnowledgeBase::from_triples)
}

pub(crate) fn parse_triples(text: &str) -> Result<Vec<Triple>, KbError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [s, p, o] = fields.as_slice() else {
            return Err(KbError::MalformedLine(n + 1));
        };
        out.push(Triple::new(*s, *p, *o).map_err(|_| KbError::MalformedLine(n + 1))?);
    }
    Ok(out)
}
