// SPDX-License-Identifier: Apache-2.0

//! BiLSTM BIO tagger: embedding → BiLSTM → linear(2h → 3) → softmax.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::LdError;
use crate::nn::{
    bidirectional_backward, bidirectional_encode, embedding_backward, embedding_lookup,
    init_bidirectional, linear_backward, linear_forward, softmax, train_loop, BiCache, CellKind,
    Gradients, Hyper, Initializer, ModelParameters, NnError, Tensor, TrainedModel,
};
use crate::text::{tokenize, TokenSequence, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tag {
    B,
    I,
    O,
}

impl Tag {
    /// Output-layer order; argmax ties resolve to the lower index.
    pub const ALL: [Tag; 3] = [Tag::B, Tag::I, Tag::O];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Tags aligned with a token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TagSequence {
    pub tags: Vec<Tag>,
}

impl TagSequence {
    /// An `I` at the start or after `O` becomes `B`.
    pub fn repaired(mut self) -> Self {
        let mut prev = Tag::O;
        for t in &mut self.tags {
            if *t == Tag::I && prev == Tag::O {
                *t = Tag::B;
            }
            prev = *t;
        }
        self
    }
}

pub fn init_tagger(vocab_size: usize, hyper: &Hyper) -> Result<ModelParameters, NnError> {
    let (d, h) = (hyper.dim, hyper.hidden);
    let mut params = ModelParameters::new(hyper.seed);
    let mut init = Initializer::new(hyper.seed);
    params.insert("embed", init.matrix(vocab_size, d))?;
    init_bidirectional(&mut params, &mut init, CellKind::Lstm, "lstm", d, h)?;
    params.insert("out.w", init.matrix(3, 2 * h))?;
    params.insert("out.b", Tensor::zeros(&[3]))?;
    params.set_arch("model", "tagger");
    params.set_arch("vocab", vocab_size);
    params.set_arch("dim", d);
    params.set_arch("hidden", h);
    Ok(params)
}

struct Forward {
    states: Tensor,
    cache: BiCache,
    probs: Tensor,
}

fn forward(params: &ModelParameters, ids: &[usize]) -> Result<Forward, NnError> {
    let embedded = embedding_lookup(params.get("embed")?, ids)?;
    let (states, cache) = bidirectional_encode(CellKind::Lstm, params, "lstm", &embedded)?;
    let logits = linear_forward(params.get("out.w")?, params.get("out.b")?, &states)?;
    Ok(Forward {
        states,
        cache,
        probs: softmax(&logits),
    })
}

fn token_ids(
    params: &ModelParameters,
    vocab: &Vocabulary,
    tokens: &TokenSequence,
) -> Result<Vec<usize>, NnError> {
    Ok(vocab.encode_bounded(&tokens.tokens, params.get("embed")?.rows()))
}

/// Per-token tag distributions `[len, 3]` in [`Tag::ALL`] order.
pub fn tag_distribution(
    params: &ModelParameters,
    vocab: &Vocabulary,
    question: &str,
) -> Result<Tensor, LdError> {
    let tokens = tokenize(question, None);
    if tokens.is_empty() {
        return Err(LdError::EmptyQuestion);
    }
    Ok(forward(params, &token_ids(params, vocab, &tokens)?)?.probs)
}

/// Argmax tag per token (ties: B > I > O), then BIO repair.
pub fn tag_entities(
    params: &ModelParameters,
    vocab: &Vocabulary,
    question: &str,
) -> Result<TagSequence, LdError> {
    let probs = tag_distribution(params, vocab, question)?;
    let tags = (0..probs.rows())
        .map(|i| {
            let row = probs.row(i);
            let mut best = 0;
            for k in 1..3 {
                if row[k] > row[best] {
                    best = k;
                }
            }
            Tag::ALL[best]
        })
        .collect();
    Ok(TagSequence { tags }.repaired())
}

/// Token range `[start, end)` of the longest B/I run, earliest on ties. A `B`
/// always opens a new run.
pub fn mention_range(tags: &TagSequence) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut start: Option<usize> = None;
    let close = |s: usize, e: usize, best: &mut Option<(usize, usize)>| {
        if best.is_none_or(|(bs, be)| e - s > be - bs) {
            *best = Some((s, e));
        }
    };
    for (i, t) in tags.tags.iter().enumerate() {
        match t {
            Tag::B => {
                if let Some(s) = start {
                    close(s, i, &mut best);
                }
                start = Some(i);
            }
            Tag::I => {
                start.get_or_insert(i);
            }
            Tag::O => {
                if let Some(s) = start.take() {
                    close(s, i, &mut best);
                }
            }
        }
    }
    if let Some(s) = start {
        close(s, tags.tags.len(), &mut best);
    }
    best
}

/// The longest tagged run joined by single spaces; empty when all tags are O.
pub fn extract_mention(tags: &TagSequence, tokens: &TokenSequence) -> String {
    match mention_range(tags) {
        Some((s, e)) => tokens.tokens[s..e].join(" "),
        None => String::new(),
    }
}

/// A tagger training line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedQuestion {
    pub question: String,
    pub tags: Vec<Tag>,
}

fn example_grad(
    params: &ModelParameters,
    ids: &[usize],
    gold: &[Tag],
) -> Result<(f64, Gradients), NnError> {
    let fwd = forward(params, ids)?;
    let len = ids.len() as f64;
    let mut loss = 0.0;
    let mut dlogits = fwd.probs.clone();
    for (i, tag) in gold.iter().enumerate() {
        let k = tag.index();
        loss -= fwd.probs.get2(i, k).max(crate::nn::PROB_FLOOR).ln();
        dlogits.row_mut(i)[k] -= 1.0;
    }
    dlogits.scale(1.0 / len);

    let mut grads = Gradients::new();
    let (dw, db, dstates) = linear_backward(params.get("out.w")?, &fwd.states, &dlogits)?;
    grads.insert("out.w", dw);
    grads.insert("out.b", db);
    let dx = bidirectional_backward(
        CellKind::Lstm,
        params,
        "lstm",
        &fwd.cache,
        &dstates,
        &mut grads,
    )?;
    let table = params.get("embed")?;
    embedding_backward(table.shape(), ids, &dx, grads.slot("embed", table.shape()))?;
    Ok((loss / len, grads))
}

/// SGD on per-token cross-entropy, averaged per sentence.
pub fn train_tagger(
    data: &[TaggedQuestion],
    vocab: &Vocabulary,
    hyper: &Hyper,
) -> Result<TrainedModel, LdError> {
    if data.is_empty() {
        return Err(LdError::EmptyDataset);
    }
    let mut examples = Vec::with_capacity(data.len());
    for (i, ex) in data.iter().enumerate() {
        let tokens = tokenize(&ex.question, None);
        if tokens.is_empty() || tokens.len() != ex.tags.len() {
            return Err(LdError::MisalignedExample(i));
        }
        examples.push((vocab.encode(&tokens.tokens), ex.tags.clone()));
    }
    let mut params = init_tagger(vocab.len(), hyper)?;
    let epoch_losses = train_loop(&mut params, &examples, hyper, |p, (ids, tags)| {
        example_grad(p, ids, tags)
    })?;
    Ok(TrainedModel {
        params,
        epoch_losses,
    })
}

/// Fraction of tokens whose decoded tag equals the gold tag.
pub fn tagger_accuracy(
    params: &ModelParameters,
    vocab: &Vocabulary,
    data: &[TaggedQuestion],
) -> Result<f64, LdError> {
    let (mut hit, mut total) = (0usize, 0usize);
    for ex in data {
        let got = tag_entities(params, vocab, &ex.question)?;
        let gold = TagSequence {
            tags: ex.tags.clone(),
        }
        .repaired();
        hit += got
            .tags
            .iter()
            .zip(&gold.tags)
            .filter(|(a, b)| a == b)
            .count();
        total += gold.tags.len();
    }
    Ok(hit as f64 / total.max(1) as f64)
}
