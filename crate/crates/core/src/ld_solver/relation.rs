// SPDX-License-Identifier: Apache-2.0

//! Relation scorer: a question pattern and a relation name are each encoded
//! twice, by an attention-pooled CNN and by an attention-pooled BiGRU, with a
//! shared embedding. The two cosine similarities are averaged.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LdError;
use crate::kb::KnowledgeBase;
use crate::nn::{
    attention_pool, attention_pool_backward, bidirectional_backward, bidirectional_encode,
    conv1d_backward, conv1d_forward, cosine, cosine_backward, embedding_backward, embedding_lookup,
    init_bidirectional, train_loop, BiCache, CellKind, Gradients, Hyper, Initializer,
    ModelParameters, NnError, Tensor, TrainedModel,
};
use crate::text::{tokenize, Vocabulary};

pub const HINGE_MARGIN: f64 = 0.2;
pub const CONV_WIDTH: usize = 3;
pub const MAX_NEGATIVES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationScore {
    pub relation: String,
    pub cnn_score: f64,
    pub gru_score: f64,
    pub combined: f64,
}

pub fn init_scorer(vocab_size: usize, hyper: &Hyper) -> Result<ModelParameters, NnError> {
    let (d, h) = (hyper.dim, hyper.hidden);
    let mut params = ModelParameters::new(hyper.seed);
    let mut init = Initializer::new(hyper.seed);
    params.insert("embed", init.matrix(vocab_size, d))?;
    params.insert(
        "cnn.filters",
        init.glorot(&[h, CONV_WIDTH, d], CONV_WIDTH * d, h),
    )?;
    params.insert("cnn.query", init.glorot(&[h], h, h))?;
    init_bidirectional(&mut params, &mut init, CellKind::Gru, "gru", d, h)?;
    params.insert("gru.query", init.glorot(&[2 * h], 2 * h, 2 * h))?;
    params.set_arch("model", "relation_scorer");
    params.set_arch("vocab", vocab_size);
    params.set_arch("dim", d);
    params.set_arch("hidden", h);
    Ok(params)
}

/// Relation names are tokenized like text, so `place_of_birth` and
/// `place of birth` read the same.
pub fn relation_tokens(relation: &str) -> Vec<String> {
    tokenize(relation, None).tokens
}

struct Encoding {
    ids: Vec<usize>,
    embedded: Tensor,
    features: Tensor,
    cnn_weights: Vec<f64>,
    cnn: Vec<f64>,
    states: Tensor,
    gru_cache: BiCache,
    gru_weights: Vec<f64>,
    gru: Vec<f64>,
}

fn encode(params: &ModelParameters, ids: Vec<usize>) -> Result<Encoding, NnError> {
    let embedded = embedding_lookup(params.get("embed")?, &ids)?;
    let mut features = conv1d_forward(params.get("cnn.filters")?, &embedded)?;
    features.data_mut().iter_mut().for_each(|v| *v = v.tanh());
    let (cnn, cnn_weights) = attention_pool(params.get("cnn.query")?.data(), &features)?;
    let (states, gru_cache) = bidirectional_encode(CellKind::Gru, params, "gru", &embedded)?;
    let (gru, gru_weights) = attention_pool(params.get("gru.query")?.data(), &states)?;
    Ok(Encoding {
        ids,
        embedded,
        features,
        cnn_weights,
        cnn,
        states,
        gru_cache,
        gru_weights,
        gru,
    })
}

/// Accumulate gradients of a scalar given `d/d cnn` and `d/d gru`.
fn encode_backward(
    params: &ModelParameters,
    enc: &Encoding,
    d_cnn: &[f64],
    d_gru: &[f64],
    grads: &mut Gradients,
) -> Result<(), NnError> {
    let query = params.get("cnn.query")?;
    let (dq, mut dfeat) =
        attention_pool_backward(query.data(), &enc.features, &enc.cnn_weights, d_cnn)?;
    grads.add("cnn.query", &Tensor::vector(dq))?;
    for (g, y) in dfeat.data_mut().iter_mut().zip(enc.features.data()) {
        *g *= 1.0 - y * y;
    }
    let filters = params.get("cnn.filters")?;
    let (dfilters, mut dx) = conv1d_backward(filters, &enc.embedded, &dfeat)?;
    grads.add("cnn.filters", &dfilters)?;

    let query = params.get("gru.query")?;
    let (dq, dstates) =
        attention_pool_backward(query.data(), &enc.states, &enc.gru_weights, d_gru)?;
    grads.add("gru.query", &Tensor::vector(dq))?;
    let dx_gru = bidirectional_backward(
        CellKind::Gru,
        params,
        "gru",
        &enc.gru_cache,
        &dstates,
        grads,
    )?;
    dx.add_assign(&dx_gru)?;

    let table = params.get("embed")?;
    embedding_backward(
        table.shape(),
        &enc.ids,
        &dx,
        grads.slot("embed", table.shape()),
    )
}

fn ids_of<S: AsRef<str>>(
    params: &ModelParameters,
    vocab: &Vocabulary,
    tokens: &[S],
) -> Result<Vec<usize>, NnError> {
    Ok(vocab.encode_bounded(tokens, params.get("embed")?.rows()))
}

fn similarity(pattern: &Encoding, relation: &Encoding) -> (f64, f64, f64) {
    let c = cosine(&pattern.cnn, &relation.cnn);
    let g = cosine(&pattern.gru, &relation.gru);
    (c, g, 0.5 * c + 0.5 * g)
}

/// Score one relation against a question pattern (mention already replaced
/// by the placeholder token).
pub fn score_relation<S: AsRef<str>>(
    params: &ModelParameters,
    vocab: &Vocabulary,
    pattern: &[S],
    relation: &str,
) -> Result<RelationScore, LdError> {
    if pattern.is_empty() {
        return Err(LdError::EmptyPattern);
    }
    let rel_tokens = relation_tokens(relation);
    if rel_tokens.is_empty() {
        return Err(LdError::EmptyRelation);
    }
    let p = encode(params, ids_of(params, vocab, pattern)?)?;
    let r = encode(params, ids_of(params, vocab, &rel_tokens)?)?;
    let (cnn_score, gru_score, combined) = similarity(&p, &r);
    Ok(RelationScore {
        relation: relation.to_string(),
        cnn_score,
        gru_score,
        combined,
    })
}

/// All candidates scored, best first (combined desc, relation asc).
pub fn rank_relations<S: AsRef<str>>(
    params: &ModelParameters,
    vocab: &Vocabulary,
    pattern: &[S],
    candidates: &[String],
) -> Result<Vec<RelationScore>, LdError> {
    if candidates.is_empty() {
        return Err(LdError::NoCandidates);
    }
    let mut scores = candidates
        .iter()
        .map(|c| score_relation(params, vocab, pattern, c))
        .collect::<Result<Vec<_>, _>>()?;
    scores.sort_by(|a, b| {
        b.combined
            .total_cmp(&a.combined)
            .then_with(|| a.relation.cmp(&b.relation))
    });
    Ok(scores)
}

pub fn detect_relation<S: AsRef<str>>(
    params: &ModelParameters,
    vocab: &Vocabulary,
    pattern: &[S],
    candidates: &[String],
) -> Result<String, LdError> {
    Ok(rank_relations(params, vocab, pattern, candidates)?
        .swap_remove(0)
        .relation)
}

/// A relation-scorer training line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationExample {
    pub pattern: Vec<String>,
    pub gold: String,
    pub negatives: Vec<String>,
}

struct Prepared {
    pattern: Vec<usize>,
    gold: Vec<usize>,
    negatives: Vec<Vec<usize>>,
}

/// Hinge loss `Σ max(0, margin − s(gold) + s(neg))` and its gradient.
fn example_grad(params: &ModelParameters, ex: &Prepared) -> Result<(f64, Gradients), NnError> {
    let p = encode(params, ex.pattern.clone())?;
    let g = encode(params, ex.gold.clone())?;
    let gold_score = similarity(&p, &g).2;

    let mut grads = Gradients::new();
    let mut loss = 0.0;
    let mut dp_cnn = vec![0.0; p.cnn.len()];
    let mut dp_gru = vec![0.0; p.gru.len()];
    let mut active = 0.0;
    for neg in &ex.negatives {
        let n = encode(params, neg.clone())?;
        let violation = HINGE_MARGIN - gold_score + similarity(&p, &n).2;
        if violation <= 0.0 {
            continue;
        }
        loss += violation;
        active += 1.0;
        let (dpc, dnc) = cosine_backward(&p.cnn, &n.cnn);
        let (dpg, dng) = cosine_backward(&p.gru, &n.gru);
        add_scaled(&mut dp_cnn, 0.5, &dpc);
        add_scaled(&mut dp_gru, 0.5, &dpg);
        encode_backward(
            params,
            &n,
            &scaled(0.5, &dnc),
            &scaled(0.5, &dng),
            &mut grads,
        )?;
    }
    if active > 0.0 {
        let (dpc, dgc) = cosine_backward(&p.cnn, &g.cnn);
        let (dpg, dgg) = cosine_backward(&p.gru, &g.gru);
        add_scaled(&mut dp_cnn, -0.5 * active, &dpc);
        add_scaled(&mut dp_gru, -0.5 * active, &dpg);
        encode_backward(
            params,
            &g,
            &scaled(-0.5 * active, &dgc),
            &scaled(-0.5 * active, &dgg),
            &mut grads,
        )?;
        encode_backward(params, &p, &dp_cnn, &dp_gru, &mut grads)?;
    }
    Ok((loss, grads))
}

fn scaled(k: f64, v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| k * x).collect()
}

fn add_scaled(acc: &mut [f64], k: f64, v: &[f64]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += k * x;
    }
}

pub fn train_relation_scorer(
    data: &[RelationExample],
    vocab: &Vocabulary,
    hyper: &Hyper,
) -> Result<TrainedModel, LdError> {
    if data.is_empty() {
        return Err(LdError::EmptyDataset);
    }
    let mut examples = Vec::with_capacity(data.len());
    for (i, ex) in data.iter().enumerate() {
        if ex.negatives.is_empty() {
            return Err(LdError::NoNegatives(i));
        }
        let rel = |r: &str| -> Result<Vec<usize>, LdError> {
            let t = relation_tokens(r);
            if t.is_empty() {
                return Err(LdError::EmptyRelation);
            }
            Ok(vocab.encode(&t))
        };
        if ex.pattern.is_empty() {
            return Err(LdError::EmptyPattern);
        }
        examples.push(Prepared {
            pattern: vocab.encode(&ex.pattern),
            gold: rel(&ex.gold)?,
            negatives: ex
                .negatives
                .iter()
                .map(|n| rel(n))
                .collect::<Result<_, _>>()?,
        });
    }
    let mut params = init_scorer(vocab.len(), hyper)?;
    let epoch_losses = train_loop(&mut params, &examples, hyper, example_grad)?;
    Ok(TrainedModel {
        params,
        epoch_losses,
    })
}

/// Fraction of examples whose gold relation outscores all of its negatives.
pub fn scorer_accuracy(
    params: &ModelParameters,
    vocab: &Vocabulary,
    data: &[RelationExample],
) -> Result<f64, LdError> {
    let mut hit = 0;
    for ex in data {
        let gold = score_relation(params, vocab, &ex.pattern, &ex.gold)?.combined;
        let mut first = true;
        for n in &ex.negatives {
            if score_relation(params, vocab, &ex.pattern, n)?.combined >= gold {
                first = false;
            }
        }
        hit += first as usize;
    }
    Ok(hit as f64 / data.len().max(1) as f64)
}

/// Up to [`MAX_NEGATIVES`] distinct relations other than `gold`, drawn from
/// the entity's own predicates, or from all predicates when it has no others.
pub fn sample_negatives<R: Rng + ?Sized>(
    kb: &KnowledgeBase,
    entity: &str,
    gold: &str,
    rng: &mut R,
) -> Vec<String> {
    let own: Vec<String> = kb
        .predicates_of(entity)
        .iter()
        .filter(|p| *p != gold)
        .cloned()
        .collect();
    let pool = if own.is_empty() {
        kb.predicates().into_iter().filter(|p| p != gold).collect()
    } else {
        own
    };
    pool.choose_multiple(rng, MAX_NEGATIVES).cloned().collect()
}
