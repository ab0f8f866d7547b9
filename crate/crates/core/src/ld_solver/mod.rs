// SPDX-License-Identifier: Apache-2.0

//! Neural linking-and-detection solver.
//!
//! A BiLSTM tagger marks the entity mention, the mention is linked to the
//! closest dictionary entries by edit distance, and a relation scorer picks
//! one of the linked entity's predicates. The answer is a plain KB lookup.

mod relation;
mod tagger;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use relation::{
    detect_relation, init_scorer, rank_relations, relation_tokens, sample_negatives,
    score_relation, scorer_accuracy, train_relation_scorer, RelationExample, RelationScore,
    CONV_WIDTH, HINGE_MARGIN, MAX_NEGATIVES,
};
pub use tagger::{
    extract_mention, init_tagger, mention_range, tag_distribution, tag_entities, tagger_accuracy,
    train_tagger, Tag, TagSequence, TaggedQuestion,
};

use crate::kb::{generate_sparql, EntityDictionary, KnowledgeBase};
use crate::nn::{ModelParameters, NnError};
use crate::sp_solver::{dedup_answers, recognize_subjects, AnswerCandidate, Solver};
use crate::text::{levenshtein, normalize, tokenize, Vocabulary, ENTITY_PLACEHOLDER};

pub const DEFAULT_MAX_DISTANCE: usize = 2;

#[derive(Debug, Error)]
pub enum LdError {
    #[error("question has no tokens")]
    EmptyQuestion,
    #[error("question pattern is empty")]
    EmptyPattern,
    #[error("relation has no tokens")]
    EmptyRelation,
    #[error("no candidate relations")]
    NoCandidates,
    #[error("training example {0}: tags do not align with tokens")]
    MisalignedExample(usize),
    #[error("training example {0} has no negatives")]
    NoNegatives(usize),
    #[error("empty training set")]
    EmptyDataset,
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCandidate {
    pub entity: String,
    pub distance: usize,
    pub mention: String,
}

/// Dictionary entries within `max_distance` edits of the normalized mention,
/// sorted by distance asc, entity length desc, entity asc.
pub fn link_entity(
    mention: &str,
    dict: &EntityDictionary,
    max_distance: usize,
) -> Vec<EntityCandidate> {
    let key = normalize(mention);
    if key.is_empty() {
        return Vec::new();
    }
    let mut out: Vec<EntityCandidate> = dict
        .iter()
        .filter_map(|(k, entity)| {
            let distance = levenshtein(&key, k);
            (distance <= max_distance).then(|| EntityCandidate {
                entity: entity.to_string(),
                distance,
                mention: mention.to_string(),
            })
        })
        .collect();
    out.sort_by(|a, b| {
        a.distance
            .cmp(&b.distance)
            .then_with(|| b.entity.chars().count().cmp(&a.entity.chars().count()))
            .then_with(|| a.entity.cmp(&b.entity))
    });
    out
}

/// Question tokens with every token overlapping the byte range `mention`
/// replaced by a single placeholder.
pub fn question_pattern(question: &str, mention: (usize, usize)) -> Vec<String> {
    let tokens = tokenize(question, None);
    let mut out = Vec::with_capacity(tokens.len());
    let mut placed = false;
    for (tok, &(s, e)) in tokens.tokens.into_iter().zip(&tokens.spans) {
        if s < mention.1 && e > mention.0 {
            if !placed {
                out.push(ENTITY_PLACEHOLDER.to_string());
                placed = true;
            }
        } else {
            out.push(tok);
        }
    }
    out
}

/// Models the solver needs.
#[derive(Debug, Clone, Copy)]
pub struct LdModels<'a> {
    pub tagger: &'a ModelParameters,
    pub scorer: &'a ModelParameters,
    pub vocab: &'a Vocabulary,
}

/// Mention text and its byte range in the question. Falls back to the first
/// dictionary match when the tagger marks nothing.
fn find_mention(
    question: &str,
    dict: &EntityDictionary,
    models: &LdModels<'_>,
) -> Option<(String, (usize, usize))> {
    let tokens = tokenize(question, None);
    if let Ok(tags) = tag_entities(models.tagger, models.vocab, question) {
        if let Some((s, e)) = mention_range(&tags) {
            let text = tokens.tokens[s..e].join(" ");
            return Some((text, (tokens.spans[s].0, tokens.spans[e - 1].1)));
        }
    }
    let first = recognize_subjects(question, dict, &[]).into_iter().next()?;
    let merged = tokenize(question, Some(dict));
    let i = merged.tokens.iter().position(|t| *t == first.surface)?;
    Some((first.surface, merged.spans[i]))
}

pub fn solve_ld(
    question: &str,
    kb: &KnowledgeBase,
    dict: &EntityDictionary,
    models: &LdModels<'_>,
) -> Vec<AnswerCandidate> {
    let Some((mention, range)) = find_mention(question, dict, models) else {
        return Vec::new();
    };
    let Some(linked) = link_entity(&mention, dict, DEFAULT_MAX_DISTANCE)
        .into_iter()
        .next()
    else {
        return Vec::new();
    };
    let candidates = kb.predicates_of(&linked.entity);
    if candidates.is_empty() {
        return Vec::new();
    }
    let pattern = question_pattern(question, range);
    let Ok(ranked) = rank_relations(models.scorer, models.vocab, &pattern, candidates) else {
        return Vec::new();
    };
    let best = &ranked[0];
    let confidence = (1.0 / (1.0 + linked.distance as f64)) * (best.combined + 1.0) / 2.0;
    let provenance = generate_sparql(&linked.entity, &best.relation).unwrap_or_default();
    let answers = kb
        .objects(&linked.entity, &best.relation)
        .iter()
        .map(|o| AnswerCandidate {
            answer: o.clone(),
            confidence,
            solver: Solver::Ld,
            provenance: provenance.clone(),
        })
        .collect();
    dedup_answers(answers)
}
