// SPDX-License-Identifier: Apache-2.0

//! Embedded full-text search over spliced triples and entity-tagged passages.
//!
//! Each document has a subject field (entity names) and a value field (text).
//! Ranking is BM25 over the value field; a query term that also occurs in the
//! document's subject field counts double.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};
use crate::kb::{EntityDictionary, KnowledgeBase, Triple};
use crate::par::Parallelism;
use crate::text::tokenize;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
pub const SUBJECT_BOOST: f64 = 2.0;
pub const DEFAULT_TOP_K: usize = 10;
const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("passage {0} has no text")]
    EmptyPassage(String),
    #[error("duplicate document id {0}")]
    DuplicateDocId(usize),
    #[error("document {0} has an empty value field")]
    EmptyValue(usize),
    #[error("unknown document id {0}")]
    UnknownDoc(usize),
    #[error("unsupported index format {0}")]
    Format(u64),
    #[error(transparent)]
    File(#[from] JsonlError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocKind {
    Triple,
    Passage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedDocument {
    pub doc_id: usize,
    pub subject_field: Vec<String>,
    pub value_field: String,
    pub kind: DocKind,
    pub origin: String,
}

/// A line of the passage file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
}

pub fn load_passages(path: &Path) -> Result<Vec<Passage>, RetrievalError> {
    Ok(jsonl::read(path)?)
}

/// `value_field` is `subject predicate object`. The three parts cannot be
/// recovered from it when any of them contains a space.
pub fn splice_triple(t: &Triple, doc_id: usize) -> IndexedDocument {
    IndexedDocument {
        doc_id,
        subject_field: vec![t.subject.clone()],
        value_field: format!("{} {} {}", t.subject, t.predicate, t.object),
        kind: DocKind::Triple,
        origin: format!("triple:{}\t{}\t{}", t.subject, t.predicate, t.object),
    }
}

pub fn tag_passage(
    passage_id: &str,
    text: &str,
    dict: &EntityDictionary,
    doc_id: usize,
) -> Result<IndexedDocument, RetrievalError> {
    if text.trim().is_empty() {
        return Err(RetrievalError::EmptyPassage(passage_id.to_string()));
    }
    let mut subjects: Vec<String> = Vec::new();
    for token in tokenize(text, Some(dict)).tokens {
        if let Some(entity) = dict.get(&token) {
            if !subjects.iter().any(|s| s == entity) {
                subjects.push(entity.to_string());
            }
        }
    }
    Ok(IndexedDocument {
        doc_id,
        subject_field: subjects,
        value_field: text.to_string(),
        kind: DocKind::Passage,
        origin: format!("passage:{passage_id}"),
    })
}

/// Triples first with ids `0..n`, then passages.
pub fn corpus_documents(
    kb: &KnowledgeBase,
    passages: &[Passage],
    dict: &EntityDictionary,
) -> Result<Vec<IndexedDocument>, RetrievalError> {
    let mut docs: Vec<IndexedDocument> = kb
        .triples()
        .iter()
        .enumerate()
        .map(|(i, t)| splice_triple(t, i))
        .collect();
    let offset = docs.len();
    for (i, p) in passages.iter().enumerate() {
        docs.push(tag_passage(&p.id, &p.text, dict, offset + i)?);
    }
    Ok(docs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    format: u64,
    postings: BTreeMap<String, Vec<(usize, usize)>>,
    doc_lengths: BTreeMap<usize, usize>,
    subject_terms: BTreeMap<String, BTreeSet<usize>>,
    avg_doc_length: f64,
    doc_count: usize,
    documents: BTreeMap<usize, IndexedDocument>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult<'a> {
    pub doc: &'a IndexedDocument,
    pub score: f64,
}

fn terms(text: &str) -> Vec<String> {
    tokenize(text, None).tokens
}

pub fn build_index(docs: Vec<IndexedDocument>) -> Result<InvertedIndex, RetrievalError> {
    let mut documents = BTreeMap::new();
    for doc in docs {
        if doc.value_field.is_empty() {
            return Err(RetrievalError::EmptyValue(doc.doc_id));
        }
        let id = doc.doc_id;
        if documents.insert(id, doc).is_some() {
            return Err(RetrievalError::DuplicateDocId(id));
        }
    }

    let mut postings: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
    let mut doc_lengths = BTreeMap::new();
    let mut subject_terms: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    // documents iterate in id order, so every posting list is sorted
    for (&id, doc) in &documents {
        let tokens = terms(&doc.value_field);
        doc_lengths.insert(id, tokens.len());
        let mut tf: BTreeMap<String, usize> = BTreeMap::new();
        for t in tokens {
            *tf.entry(t).or_default() += 1;
        }
        for (t, n) in tf {
            postings.entry(t).or_default().push((id, n));
        }
        for s in &doc.subject_field {
            for t in terms(s) {
                subject_terms.entry(t).or_default().insert(id);
            }
        }
    }
    let doc_count = documents.len();
    let avg_doc_length = if doc_count == 0 {
        0.0
    } else {
        doc_lengths.values().sum::<usize>() as f64 / doc_count as f64
    };
    Ok(InvertedIndex {
        format: FORMAT_VERSION,
        postings,
        doc_lengths,
        subject_terms,
        avg_doc_length,
        doc_count,
        documents,
    })
}

/// Distinct terms in first-occurrence order.
fn query_terms(query: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for t in terms(query) {
        if !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

impl InvertedIndex {
    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, doc_id: usize) -> Option<usize> {
        self.doc_lengths.get(&doc_id).copied()
    }

    pub fn postings(&self, term: &str) -> &[(usize, usize)] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn in_subject(&self, term: &str, doc_id: usize) -> bool {
        self.subject_terms
            .get(term)
            .is_some_and(|s| s.contains(&doc_id))
    }

    pub fn document(&self, doc_id: usize) -> Option<&IndexedDocument> {
        self.documents.get(&doc_id)
    }

    pub fn documents(&self) -> impl Iterator<Item = &IndexedDocument> {
        self.documents.values()
    }

    fn term_frequency(&self, term: &str, doc_id: usize) -> usize {
        let list = self.postings(term);
        list.binary_search_by_key(&doc_id, |&(id, _)| id)
            .map_or(0, |i| list[i].1)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count as f64;
        let df = self.postings(term).len() as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Sum of per-term contributions, in the order given; duplicate terms
    /// count once.
    pub fn bm25_score<S: AsRef<str>>(
        &self,
        query_terms: &[S],
        doc_id: usize,
    ) -> Result<f64, RetrievalError> {
        let len = *self
            .doc_lengths
            .get(&doc_id)
            .ok_or(RetrievalError::UnknownDoc(doc_id))? as f64;
        let mut seen: Vec<&str> = Vec::new();
        let mut score = 0.0;
        for t in query_terms {
            let t = t.as_ref();
            if seen.contains(&t) {
                continue;
            }
            seen.push(t);
            let tf = self.term_frequency(t, doc_id) as f64;
            if tf == 0.0 {
                continue;
            }
            let norm = 1.0 - BM25_B + BM25_B * len / self.avg_doc_length;
            let mut contribution = self.idf(t) * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * norm);
            if self.in_subject(t, doc_id) {
                contribution *= SUBJECT_BOOST;
            }
            score += contribution;
        }
        Ok(score)
    }

    pub fn search(&self, query: &str, k: usize) -> Vec<RetrievalResult<'_>> {
        self.search_with(query, k, Parallelism::default())
    }

    pub fn search_with(&self, query: &str, k: usize, par: Parallelism) -> Vec<RetrievalResult<'_>> {
        let terms = query_terms(query);
        let candidates: BTreeSet<usize> = terms
            .iter()
            .flat_map(|t| self.postings(t).iter().map(|&(id, _)| id))
            .collect();
        let candidates: Vec<usize> = candidates.into_iter().collect();
        let scores = par.map(&candidates, |&id| {
            self.bm25_score(&terms, id).expect("candidate is indexed")
        });
        let mut results: Vec<RetrievalResult<'_>> = candidates
            .iter()
            .zip(scores)
            .map(|(id, score)| RetrievalResult {
                doc: &self.documents[id],
                score,
            })
            .collect();
        results.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.doc.doc_id.cmp(&b.doc.doc_id))
        });
        results.truncate(k);
        results
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("index serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, RetrievalError> {
        let idx: InvertedIndex = serde_json::from_str(text)?;
        if idx.format != FORMAT_VERSION {
            return Err(RetrievalError::Format(idx.format));
        }
        Ok(idx)
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        Ok(fs::write(path, self.to_json())?)
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Term-frequency table of one document, keyed by term.
pub fn term_counts(idx: &InvertedIndex, doc_id: usize) -> HashMap<String, usize> {
    idx.postings
        .iter()
        .filter_map(|(t, list)| {
            list.binary_search_by_key(&doc_id, |&(id, _)| id)
                .ok()
                .map(|i| (t.clone(), list[i].1))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(id: usize, subjects: &[&str], value: &str) -> IndexedDocument {
        IndexedDocument {
            doc_id: id,
            subject_field: subjects.iter().map(|s| s.to_string()).collect(),
            value_field: value.to_string(),
            kind: DocKind::Passage,
            origin: format!("passage:{id}"),
        }
    }

    /// Closed-form BM25 from raw token lists, independent of the index.
    fn oracle_score(docs: &[IndexedDocument], query: &str, target: usize) -> f64 {
        let toks: Vec<Vec<String>> = docs
            .iter()
            .map(|d| tokenize(&d.value_field, None).tokens)
            .collect();
        let n = docs.len() as f64;
        let avg = toks.iter().map(Vec::len).sum::<usize>() as f64 / n;
        let pos = docs.iter().position(|d| d.doc_id == target).unwrap();
        let mut distinct: Vec<String> = Vec::new();
        for t in tokenize(query, None).tokens {
            if !distinct.contains(&t) {
                distinct.push(t);
            }
        }
        let mut score = 0.0;
        for t in &distinct {
            let tf = toks[pos].iter().filter(|x| *x == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = toks.iter().filter(|d| d.contains(t)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            let len = toks[pos].len() as f64;
            let mut c = idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * len / avg));
            let boosted = docs[pos]
                .subject_field
                .iter()
                .any(|s| tokenize(s, None).tokens.contains(t));
            if boosted {
                c *= 2.0;
            }
            score += c;
        }
        score
    }

    #[test]
    fn splice() {
        let t = Triple::new("hamlet", "author", "shakespeare").unwrap();
        let d = splice_triple(&t, 4);
        assert_eq!(d.value_field, "hamlet author shakespeare");
        assert_eq!(d.subject_field, ["hamlet"]);
        assert_eq!(d.kind, DocKind::Triple);
        let t = Triple::new("New York", "population", "8 million").unwrap();
        assert_eq!(splice_triple(&t, 0).subject_field, ["New York"]);
    }

    #[test]
    fn tagging() {
        let kb = KnowledgeBase::from_triples([
            Triple::new("New York", "country", "usa").unwrap(),
            Triple::new("usa", "capital", "washington").unwrap(),
        ]);
        let dict = EntityDictionary::build(&kb);
        let d = tag_passage(
            "p1",
            "I moved to New York from the USA. New York is big.",
            &dict,
            0,
        )
        .unwrap();
        assert_eq!(d.subject_field, ["New York", "usa"]);
        assert_eq!(d.origin, "passage:p1");
        let d = tag_passage("p2", "nothing here", &dict, 1).unwrap();
        assert!(d.subject_field.is_empty());
        assert!(matches!(
            tag_passage("p3", "  ", &dict, 2),
            Err(RetrievalError::EmptyPassage(_))
        ));
    }

    #[test]
    fn index_statistics() {
        let idx = build_index(vec![]).unwrap();
        assert_eq!(idx.doc_count(), 0);
        assert!(idx.search("anything", 10).is_empty());

        let idx = build_index(vec![doc(7, &[], "a b a")]).unwrap();
        assert_eq!(idx.postings("a"), [(7, 2)]);
        assert_eq!(idx.postings("b"), [(7, 1)]);
        assert_eq!(idx.doc_length(7), Some(3));

        let idx = build_index(vec![doc(0, &[], "x y"), doc(1, &[], "x y z w")]).unwrap();
        assert_eq!(idx.avg_doc_length(), 3.0);

        assert!(matches!(
            build_index(vec![doc(1, &[], "a"), doc(1, &[], "b")]),
            Err(RetrievalError::DuplicateDocId(1))
        ));
    }

    #[test]
    fn scoring() {
        let docs = vec![doc(0, &[], "the cat sat"), doc(1, &[], "a dog ran")];
        let idx = build_index(docs.clone()).unwrap();
        assert_eq!(idx.bm25_score(&["cat"], 1).unwrap(), 0.0);
        assert!(matches!(
            idx.bm25_score(&["cat"], 9),
            Err(RetrievalError::UnknownDoc(9))
        ));

        let single = vec![doc(0, &[], "alpha beta alpha gamma")];
        let idx = build_index(single.clone()).unwrap();
        let got = idx.bm25_score(&["alpha", "gamma"], 0).unwrap();
        assert!((got - oracle_score(&single, "alpha gamma", 0)).abs() < 1e-12);

        let plain = build_index(vec![
            doc(0, &[], "hamlet author shakespeare"),
            doc(1, &[], "x"),
        ])
        .unwrap();
        let boosted = build_index(vec![
            doc(0, &["hamlet"], "hamlet author shakespeare"),
            doc(1, &[], "x"),
        ])
        .unwrap();
        let a = plain.bm25_score(&["hamlet"], 0).unwrap();
        let b = boosted.bm25_score(&["hamlet"], 0).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn dominance() {
        let idx = build_index(vec![
            doc(0, &[], "red apple"),
            doc(1, &[], "red green apple pie"),
            doc(2, &[], "green tea"),
        ])
        .unwrap();
        let hits = idx.search("green apple pie", 10);
        assert_eq!(hits[0].doc.doc_id, 1);
        assert_eq!(hits.len(), 3);
        assert!(idx.search("", 10).is_empty());
        assert!(idx.search("?!", 10).is_empty());
    }

    #[test]
    fn persistence_round_trip() {
        let idx = build_index(vec![doc(0, &["A"], "a b"), doc(3, &[], "c d e")]).unwrap();
        let json = idx.to_json();
        assert!(json.contains("\"format\":1"));
        assert_eq!(InvertedIndex::from_json(&json).unwrap(), idx);
        let bad = json.replace("\"format\":1", "\"format\":2");
        assert!(matches!(
            InvertedIndex::from_json(&bad),
            Err(RetrievalError::Format(2))
        ));
    }

    fn corpus() -> impl Strategy<Value = (Vec<IndexedDocument>, String)> {
        let word = prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]);
        let text = prop::collection::vec(word.clone(), 1..8).prop_map(|w| w.join(" "));
        let subj = prop::collection::vec(word.clone(), 0..2);
        let d = (text, subj);
        (
            prop::collection::vec(d, 1..12),
            prop::collection::vec(word, 0..4).prop_map(|w| w.join(" ")),
        )
            .prop_map(|(docs, q)| {
                let docs = docs
                    .into_iter()
                    .enumerate()
                    .map(|(i, (t, s))| IndexedDocument {
                        doc_id: i,
                        subject_field: s.into_iter().map(String::from).collect(),
                        value_field: t,
                        kind: DocKind::Passage,
                        origin: String::new(),
                    })
                    .collect();
                (docs, q)
            })
    }

    proptest! {
        #[test]
        fn search_matches_exhaustive((docs, q) in corpus(), k in 1usize..6) {
            let idx = build_index(docs.clone()).unwrap();
            let mut expected: Vec<(usize, f64)> = docs
                .iter()
                .map(|d| (d.doc_id, oracle_score(&docs, &q, d.doc_id)))
                .filter(|(_, s)| *s > 0.0)
                .collect();
            expected.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            expected.truncate(k);
            let got = idx.search(&q, k);
            prop_assert_eq!(got.len(), expected.len());
            for (g, e) in got.iter().zip(&expected) {
                prop_assert_eq!(g.doc.doc_id, e.0);
                prop_assert!((g.score - e.1).abs() < 1e-9);
                prop_assert!(g.score > 0.0);
            }
        }

        #[test]
        fn prefix_property((docs, q) in corpus(), k in 1usize..6) {
            let idx = build_index(docs).unwrap();
            let a: Vec<usize> = idx.search(&q, k).iter().map(|r| r.doc.doc_id).collect();
            let b: Vec<usize> = idx.search(&q, k + 1).iter().map(|r| r.doc.doc_id).collect();
            prop_assert_eq!(&a[..], &b[..a.len()]);
        }

        #[test]
        fn order_independent((docs, _q) in corpus()) {
            let forward = build_index(docs.clone()).unwrap();
            let mut rev = docs.clone();
            rev.reverse();
            prop_assert_eq!(forward, build_index(rev).unwrap());
        }

        #[test]
        fn postings_local_to_document((docs, _q) in corpus()) {
            let idx = build_index(docs.clone()).unwrap();
            let mut more = docs.clone();
            more.push(IndexedDocument { doc_id: 99, subject_field: vec![], value_field: "a a f".into(), kind: DocKind::Passage, origin: String::new() });
            let bigger = build_index(more).unwrap();
            for d in &docs {
                prop_assert_eq!(term_counts(&idx, d.doc_id), term_counts(&bigger, d.doc_id));
            }
            let mean = idx.doc_lengths.values().sum::<usize>() as f64 / idx.doc_count() as f64;
            prop_assert!((idx.avg_doc_length() - mean).abs() < 1e-9);
        }

        #[test]
        fn modes_agree((docs, q) in corpus()) {
            let idx = build_index(docs).unwrap();
            let s: Vec<(usize, f64)> = idx.search_with(&q, 10, Parallelism::Sequential).iter().map(|r| (r.doc.doc_id, r.score)).collect();
            let p: Vec<(usize, f64)> = idx.search_with(&q, 10, Parallelism::Parallel).iter().map(|r| (r.doc.doc_id, r.score)).collect();
            prop_assert_eq!(s, p);
        }
    }
}
