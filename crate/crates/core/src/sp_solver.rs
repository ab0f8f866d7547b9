// SPDX-License-Identifier: Apache-2.0

//! Rule-based semantic-parsing solver.
//!
//! Candidate subjects come from full dictionary matches over the segmented
//! question and from regular-expression capture groups; candidate predicates
//! come from template matches. Every subject is paired with every predicate,
//! each pair becomes a SPARQL query, and the bindings are the answers.
//!
//! Confidences: dictionary subject 1.0, template-captured subject 0.8,
//! predicate = its template's confidence (default 0.9). A query's confidence
//! is subject × predicate, split evenly across its bindings.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use log::debug;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};
use crate::kb::{
    execute_sparql, generate_sparql, parse_sparql, EntityDictionary, KbError, KnowledgeBase,
};
use crate::text::{normalize, tokenize};

pub const DICTIONARY_CONFIDENCE: f64 = 1.0;
pub const TEMPLATE_CAPTURE_CONFIDENCE: f64 = 0.8;
pub const DEFAULT_TEMPLATE_CONFIDENCE: f64 = 0.9;

/// Which solver produced an answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Sp,
    Ld,
    Rr,
}

impl Solver {
    pub const ALL: [Solver; 3] = [Solver::Sp, Solver::Ld, Solver::Rr];

    pub fn as_str(self) -> &'static str {
        match self {
            Solver::Sp => "sp",
            Solver::Ld => "ld",
            Solver::Rr => "rr",
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An answer string with its confidence and origin; the common output of all
/// three solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerCandidate {
    pub answer: String,
    pub confidence: f64,
    pub solver: Solver,
    pub provenance: String,
}

/// Keep the highest-confidence candidate per answer string, then sort by
/// confidence desc, answer asc.
pub(crate) fn dedup_answers(candidates: Vec<AnswerCandidate>) -> Vec<AnswerCandidate> {
    let mut best: Vec<AnswerCandidate> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for c in candidates {
        match index.get(&c.answer) {
            Some(&i) if best[i].confidence >= c.confidence => {}
            Some(&i) => best[i] = c,
            None => {
                index.insert(c.answer.clone(), best.len());
                best.push(c);
            }
        }
    }
    best.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.answer.cmp(&b.answer))
    });
    best
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {index}: {source}")]
    BadPattern { index: usize, source: regex::Error },
    #[error("template {index}: subject_group {group} but pattern has {groups} groups")]
    MissingGroup {
        index: usize,
        group: usize,
        groups: usize,
    },
    #[error("template {index}: confidence {confidence} outside (0, 1]")]
    BadConfidence { index: usize, confidence: f64 },
    #[error(transparent)]
    File(#[from] JsonlError),
}

#[derive(Debug, Deserialize)]
struct TemplateRecord {
    pattern: String,
    predicate: String,
    subject_group: Option<usize>,
    confidence: Option<f64>,
}

/// A question pattern that signals a predicate and may capture the subject.
#[derive(Debug, Clone)]
pub struct QuestionTemplate {
    pub pattern: Regex,
    pub predicate: String,
    pub subject_group: Option<usize>,
    pub confidence: f64,
}

impl QuestionTemplate {
    pub fn new(
        pattern: &str,
        predicate: &str,
        subject_group: Option<usize>,
        confidence: f64,
    ) -> Result<Self, TemplateError> {
        Self::build(0, pattern, predicate, subject_group, Some(confidence))
    }

    fn build(
        index: usize,
        pattern: &str,
        predicate: &str,
        subject_group: Option<usize>,
        confidence: Option<f64>,
    ) -> Result<Self, TemplateError> {
        let regex =
            Regex::new(pattern).map_err(|source| TemplateError::BadPattern { index, source })?;
        let groups = regex.captures_len() - 1;
        if let Some(group) = subject_group {
            if group == 0 || group > groups {
                return Err(TemplateError::MissingGroup {
                    index,
                    group,
                    groups,
                });
            }
        }
        let confidence = confidence.unwrap_or(DEFAULT_TEMPLATE_CONFIDENCE);
        if !(confidence > 0.0 && confidence <= 1.0) {
            return Err(TemplateError::BadConfidence { index, confidence });
        }
        Ok(QuestionTemplate {
            pattern: regex,
            predicate: predicate.to_string(),
            subject_group,
            confidence,
        })
    }
}

/// Template file: JSON Lines with `pattern`, `predicate`, `subject_group`
/// (integer or null) and optional `confidence`.
pub fn load_templates(path: &Path) -> Result<Vec<QuestionTemplate>, TemplateError> {
    jsonl::read::<TemplateRecord>(path)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            QuestionTemplate::build(i, &r.pattern, &r.predicate, r.subject_group, r.confidence)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubjectSource {
    Dictionary,
    Template,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectCandidate {
    pub surface: String,
    pub entity: String,
    pub confidence: f64,
    pub source: SubjectSource,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredicateCandidate {
    pub predicate: String,
    pub confidence: f64,
    pub template_id: usize,
}

pub fn recognize_subjects(
    question: &str,
    dict: &EntityDictionary,
    templates: &[QuestionTemplate],
) -> Vec<SubjectCandidate> {
    let normalized = normalize(question);
    let mut found: Vec<SubjectCandidate> = Vec::new();
    for token in tokenize(&normalized, Some(dict)).tokens {
        if let Some(entity) = dict.get(&token) {
            found.push(SubjectCandidate {
                entity: entity.to_string(),
                surface: token,
                confidence: DICTIONARY_CONFIDENCE,
                source: SubjectSource::Dictionary,
            });
        }
    }
    for template in templates {
        let Some(group) = template.subject_group else {
            continue;
        };
        let Some(caps) = template.pattern.captures(&normalized) else {
            continue;
        };
        let Some(m) = caps.get(group) else { continue };
        if let Some(entity) = dict.get(&normalize(m.as_str())) {
            found.push(SubjectCandidate {
                surface: m.as_str().to_string(),
                entity: entity.to_string(),
                confidence: TEMPLATE_CAPTURE_CONFIDENCE,
                source: SubjectSource::Template,
            });
        }
    }

    let mut best: Vec<SubjectCandidate> = Vec::new();
    for c in found {
        match best.iter_mut().find(|b| b.entity == c.entity) {
            Some(b) if b.confidence < c.confidence => *b = c,
            Some(_) => {}
            None => best.push(c),
        }
    }
    best.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.entity.cmp(&b.entity))
    });
    best
}

pub fn recognize_predicates(
    question: &str,
    templates: &[QuestionTemplate],
) -> Vec<PredicateCandidate> {
    let normalized = normalize(question);
    let mut best: Vec<PredicateCandidate> = Vec::new();
    for (template_id, template) in templates.iter().enumerate() {
        if !template.pattern.is_match(&normalized) {
            continue;
        }
        let c = PredicateCandidate {
            predicate: template.predicate.clone(),
            confidence: template.confidence,
            template_id,
        };
        match best.iter_mut().find(|b| b.predicate == c.predicate) {
            Some(b) if b.confidence < c.confidence => *b = c,
            Some(_) => {}
            None => best.push(c),
        }
    }
    best.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.predicate.cmp(&b.predicate))
    });
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedQuery {
    pub query: String,
    pub confidence: f64,
}

/// Subjects × predicates, subjects-major.
pub fn generate_queries(
    subjects: &[SubjectCandidate],
    predicates: &[PredicateCandidate],
) -> Vec<GeneratedQuery> {
    subjects
        .iter()
        .flat_map(|s| {
            predicates.iter().filter_map(move |p| {
                Some(GeneratedQuery {
                    query: generate_sparql(&s.entity, &p.predicate).ok()?,
                    confidence: s.confidence * p.confidence,
                })
            })
        })
        .collect()
}

pub fn solve_sp(
    question: &str,
    kb: &KnowledgeBase,
    dict: &EntityDictionary,
    templates: &[QuestionTemplate],
) -> Vec<AnswerCandidate> {
    let subjects = recognize_subjects(question, dict, templates);
    if subjects.is_empty() {
        return Vec::new();
    }
    let predicates = recognize_predicates(question, templates);
    let mut answers = Vec::new();
    for generated in generate_queries(&subjects, &predicates) {
        let bindings = match parse_sparql(&generated.query).and_then(|q| execute_sparql(kb, &q)) {
            Ok(b) => b,
            Err(e @ KbError::FilterTypeError(_)) => {
                debug!("sp: skipping `{}`: {e}", generated.query);
                continue;
            }
            Err(e) => {
                debug!("sp: query `{}` failed: {e}", generated.query);
                continue;
            }
        };
        let share = generated.confidence / bindings.len().max(1) as f64;
        answers.extend(bindings.into_iter().map(|answer| AnswerCandidate {
            answer,
            confidence: share,
            solver: Solver::Sp,
            provenance: generated.query.clone(),
        }));
    }
    dedup_answers(answers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::Triple;

    fn kb(triples: &[(&str, &str, &str)]) -> KnowledgeBase {
        KnowledgeBase::from_triples(
            triples
                .iter()
                .map(|(s, p, o)| Triple::new(*s, *p, *o).unwrap()),
        )
    }

    fn toy() -> (KnowledgeBase, EntityDictionary, Vec<QuestionTemplate>) {
        let k = kb(&[
            ("hamlet", "author", "shakespeare"),
            ("hamlet", "year", "1603"),
            ("shakespeare", "born in", "stratford"),
        ]);
        let d = EntityDictionary::build(&k);
        let t = vec![
            QuestionTemplate::new("^who wrote (.+)$", "author", Some(1), 0.9).unwrap(),
            QuestionTemplate::new("^when was (.+) written$", "year", Some(1), 0.9).unwrap(),
        ];
        (k, d, t)
    }

    #[test]
    fn dictionary_subject() {
        let (_, d, _) = toy();
        let s = recognize_subjects("who wrote hamlet", &d, &[]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].entity, "hamlet");
        assert_eq!(s[0].confidence, 1.0);
        assert_eq!(s[0].source, SubjectSource::Dictionary);
    }

    #[test]
    fn template_capture_dedups_to_max() {
        let (_, d, t) = toy();
        let s = recognize_subjects("Who wrote Hamlet?", &d, &t);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].confidence, 1.0);
        assert_eq!(s[0].source, SubjectSource::Dictionary);
    }

    #[test]
    fn template_only_subject() {
        // "the bard" resolves only through the capture group after normalization
        let k = kb(&[("The Bard", "born in", "stratford")]);
        let d = EntityDictionary::build(&k);
        let t = [QuestionTemplate::new("^where was (.+) born$", "born in", Some(1), 0.9).unwrap()];
        let s = recognize_subjects("where was THE BARD born", &d, &t);
        assert_eq!(s[0].entity, "The Bard");
        // the dictionary also matches the merged token, so max confidence wins
        assert_eq!(s[0].confidence, 1.0);

        let k = kb(&[("x-ray", "inventor", "roentgen")]);
        let d = EntityDictionary::build(&k);
        let t =
            [QuestionTemplate::new("^who invented the (.+)$", "inventor", Some(1), 0.9).unwrap()];
        let s = recognize_subjects("who invented the x-ray", &d, &t);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].entity, "x-ray");
    }

    #[test]
    fn no_hits() {
        let (_, d, t) = toy();
        assert!(recognize_subjects("what is love", &d, &t).is_empty());
        assert!(recognize_predicates("what is love", &t).is_empty());
    }

    #[test]
    fn predicate_templates() {
        let t = [QuestionTemplate::new("^who wrote .+$", "author", None, 0.9).unwrap()];
        let p = recognize_predicates("who wrote hamlet", &t);
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].predicate.as_str(), p[0].confidence), ("author", 0.9));

        let t = [
            QuestionTemplate::new("wrote", "author", None, 0.7).unwrap(),
            QuestionTemplate::new("^who wrote", "author", None, 0.9).unwrap(),
        ];
        let p = recognize_predicates("who wrote hamlet", &t);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].confidence, 0.9);
        assert_eq!(p[0].template_id, 1);
    }

    #[test]
    fn query_cross_product() {
        let subj = |e: &str| SubjectCandidate {
            surface: e.into(),
            entity: e.into(),
            confidence: 1.0,
            source: SubjectSource::Dictionary,
        };
        let pred = |p: &str, c: f64| PredicateCandidate {
            predicate: p.into(),
            confidence: c,
            template_id: 0,
        };
        let subjects = [subj("a"), subj("b")];
        let predicates = [pred("p", 0.9), pred("q", 0.5), pred("r", 0.3)];
        let q = generate_queries(&subjects, &predicates);
        assert_eq!(q.len(), 6);
        assert_eq!(q[0].query, "SELECT ?x WHERE { <a> <p> ?x . }");
        assert_eq!(q[0].confidence, 0.9);
        assert_eq!(q[3].query, "SELECT ?x WHERE { <b> <p> ?x . }");
        assert!(generate_queries(&[], &predicates).is_empty());
        assert!(generate_queries(&subjects, &[]).is_empty());
    }

    #[test]
    fn end_to_end_single_answer() {
        let (k, d, t) = toy();
        let answers = solve_sp("who wrote hamlet", &k, &d, &t);
        assert_eq!(answers.len(), 1);
        assert_eq!(answers[0].answer, "shakespeare");
        assert!((answers[0].confidence - 0.9).abs() < 1e-15);
        assert_eq!(answers[0].solver, Solver::Sp);
        let replay = execute_sparql(&k, &parse_sparql(&answers[0].provenance).unwrap()).unwrap();
        assert!(replay.contains(&answers[0].answer));
    }

    #[test]
    fn multi_binding_split() {
        let k = kb(&[("hamlet", "year", "1601"), ("hamlet", "year", "1603")]);
        let d = EntityDictionary::build(&k);
        let t = [QuestionTemplate::new("^when was .+ written$", "year", None, 0.8).unwrap()];
        let answers = solve_sp("when was hamlet written", &k, &d, &t);
        assert_eq!(answers.len(), 2);
        for a in &answers {
            assert!((a.confidence - 0.4).abs() < 1e-15);
        }
        assert_eq!(answers[0].answer, "1601");
    }

    #[test]
    fn no_subject_no_answer() {
        let (k, d, t) = toy();
        assert!(solve_sp("who wrote the odyssey", &k, &d, &t).is_empty());
    }

    #[test]
    fn template_validation() {
        assert!(matches!(
            QuestionTemplate::new("(", "p", None, 0.9),
            Err(TemplateError::BadPattern { .. })
        ));
        assert!(matches!(
            QuestionTemplate::new("^a (b)$", "p", Some(2), 0.9),
            Err(TemplateError::MissingGroup { .. })
        ));
        assert!(matches!(
            QuestionTemplate::new("a", "p", None, 0.0),
            Err(TemplateError::BadConfidence { .. })
        ));
    }

    #[test]
    fn template_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(
            &path,
            "{\"pattern\": \"^who wrote (.+)$\", \"predicate\": \"author\", \"subject_group\": 1}\n\
             {\"pattern\": \"born\", \"predicate\": \"born in\", \"subject_group\": null, \"confidence\": 0.6}\n",
        )
        .unwrap();
        let t = load_templates(&path).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].confidence, DEFAULT_TEMPLATE_CONFIDENCE);
        assert_eq!(t[0].subject_group, Some(1));
        assert_eq!(t[1].confidence, 0.6);
    }

    #[test]
    fn adding_templates_is_monotone() {
        let (k, d, t) = toy();
        let extra = QuestionTemplate::new("hamlet", "year", None, 0.5).unwrap();
        for q in ["who wrote hamlet", "when was hamlet written", "hamlet"] {
            let before = solve_sp(q, &k, &d, &t);
            let mut more = t.clone();
            more.push(extra.clone());
            let after = solve_sp(q, &k, &d, &more);
            for a in &before {
                let b = after
                    .iter()
                    .find(|b| b.answer == a.answer)
                    .expect("answer kept");
                assert!(b.confidence >= a.confidence);
            }
        }
    }
}
