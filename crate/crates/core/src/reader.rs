// SPDX-License-Identifier: Apache-2.0

//! Extractive span reader.
//!
//! The question is encoded by a BiGRU and attention-pooled to `q`; passage
//! positions are encoded by a second BiGRU to `H`. Start and end logits are
//! the bilinear forms `H·W_s·q` and `H·W_e·q`. Logits are never normalized per
//! passage, so span scores `start[i] + end[j]` compare across passages and the
//! answer is a global argmax.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{
    attention_pool, attention_pool_backward, bidirectional_backward, bidirectional_encode, dot,
    embedding_backward, embedding_lookup, init_bidirectional, softmax_slice, train_loop, BiCache,
    CellKind, Gradients, Hyper, Initializer, ModelParameters, NnError, Tensor, TrainedModel,
    PROB_FLOOR,
};
use crate::par::Parallelism;
use crate::retrieval::{DocKind, RetrievalResult};
use crate::sp_solver::{AnswerCandidate, Solver};
use crate::text::{tokenize, Vocabulary, UNK};

pub const MAX_SPAN_LEN: usize = 15;
pub const TOP_K_PASSAGES: usize = 10;

#[derive(Debug, Error)]
pub enum ReaderError {
    #[error("passage has no tokens")]
    EmptyPassage,
    #[error("question has no tokens")]
    EmptyQuestion,
    #[error("training example {0}: answer span outside the passage")]
    SpanOutOfRange(usize),
    #[error("empty training set")]
    EmptyDataset,
    #[error("reader parameters: {0}")]
    BadModel(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanPrediction {
    pub passage_doc_id: usize,
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    pub raw_score: f64,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct ReaderModel {
    pub params: ModelParameters,
    pub vocab: Vocabulary,
    pub max_span_len: usize,
}

const ENCODER_NAMES: [&str; 2] = ["question", "passage"];

pub fn init_reader(vocab_size: usize, hyper: &Hyper) -> Result<ModelParameters, NnError> {
    let (d, h) = (hyper.dim, hyper.hidden);
    let mut params = ModelParameters::new(hyper.seed);
    let mut init = Initializer::new(hyper.seed);
    params.insert("embed", init.matrix(vocab_size, d))?;
    for enc in ENCODER_NAMES {
        init_bidirectional(&mut params, &mut init, CellKind::Gru, enc, d, h)?;
    }
    params.insert("question.query", init.glorot(&[2 * h], 2 * h, 2 * h))?;
    params.insert("passage.match", init.glorot(&[d], d, d))?;
    params.insert("start.w", init.matrix(2 * h, 2 * h))?;
    params.insert("end.w", init.matrix(2 * h, 2 * h))?;
    params.set_arch("model", "reader");
    params.set_arch("vocab", vocab_size);
    params.set_arch("dim", d);
    params.set_arch("hidden", h);
    params.set_arch("max_span_len", MAX_SPAN_LEN);
    Ok(params)
}

impl ReaderModel {
    /// Checks that the parameter shapes fit together.
    pub fn new(params: ModelParameters, vocab: Vocabulary) -> Result<Self, ReaderError> {
        let bad = |m: String| ReaderError::BadModel(m);
        let embed = params.get("embed")?;
        let d = embed.cols();
        let two_h = params.get("question.query")?.len();
        for enc in ENCODER_NAMES {
            for dir in ["fwd", "bwd"] {
                let w = params.get(&format!("{enc}.{dir}.z.w"))?;
                if w.shape() != [two_h / 2, d] {
                    return Err(bad(format!(
                        "{enc}.{dir} expects [{}, {d}], got {:?}",
                        two_h / 2,
                        w.shape()
                    )));
                }
            }
        }
        if params.get("passage.match")?.len() != d {
            return Err(bad(format!("passage.match must have length {d}")));
        }
        for name in ["start.w", "end.w"] {
            if params.get(name)?.shape() != [two_h, two_h] {
                return Err(bad(format!("{name} must be [{two_h}, {two_h}]")));
            }
        }
        let max_span_len = params.arch_usize("max_span_len").unwrap_or(MAX_SPAN_LEN);
        Ok(ReaderModel {
            params,
            vocab,
            max_span_len,
        })
    }

    fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        self.vocab
            .encode_bounded(tokens, self.params.get("embed").map_or(0, Tensor::rows))
    }
}

struct QuestionEncoding {
    ids: Vec<usize>,
    cache: BiCache,
    states: Tensor,
    weights: Vec<f64>,
    q: Vec<f64>,
}

struct PassageEncoding {
    ids: Vec<usize>,
    matched: Vec<bool>,
    cache: BiCache,
    states: Tensor,
}

fn encode_question(params: &ModelParameters, ids: Vec<usize>) -> Result<QuestionEncoding, NnError> {
    let x = embedding_lookup(params.get("embed")?, &ids)?;
    let (states, cache) = bidirectional_encode(CellKind::Gru, params, "question", &x)?;
    let (q, weights) = attention_pool(params.get("question.query")?.data(), &states)?;
    Ok(QuestionEncoding {
        ids,
        cache,
        states,
        weights,
        q,
    })
}

/// Passage tokens that also occur in the question get `passage.match` added
/// to their embedding.
fn encode_passage(
    params: &ModelParameters,
    ids: Vec<usize>,
    question: &[usize],
) -> Result<PassageEncoding, NnError> {
    let mut x = embedding_lookup(params.get("embed")?, &ids)?;
    let feature = params.get("passage.match")?.data();
    let matched: Vec<bool> = ids
        .iter()
        .map(|id| *id != UNK && question.contains(id))
        .collect();
    for (t, _) in matched.iter().enumerate().filter(|(_, m)| **m) {
        for (xi, fi) in x.row_mut(t).iter_mut().zip(feature) {
            *xi += fi;
        }
    }
    let (states, cache) = bidirectional_encode(CellKind::Gru, params, "passage", &x)?;
    Ok(PassageEncoding {
        ids,
        matched,
        cache,
        states,
    })
}

/// `H · (W · q)`.
fn bilinear(w: &Tensor, q: &[f64], states: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let wq: Vec<f64> = (0..w.rows()).map(|i| dot(w.row(i), q)).collect();
    let logits = (0..states.rows())
        .map(|t| dot(states.row(t), &wq))
        .collect();
    (logits, wq)
}

fn logits(
    params: &ModelParameters,
    q: &QuestionEncoding,
    p: &PassageEncoding,
) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    let start = bilinear(params.get("start.w")?, &q.q, &p.states).0;
    let end = bilinear(params.get("end.w")?, &q.q, &p.states).0;
    Ok((start, end))
}

pub fn predict_logits<S: AsRef<str>>(
    model: &ReaderModel,
    question: &str,
    passage_tokens: &[S],
) -> Result<(Vec<f64>, Vec<f64>), ReaderError> {
    if passage_tokens.is_empty() {
        return Err(ReaderError::EmptyPassage);
    }
    let q_tokens = tokenize(question, None).tokens;
    if q_tokens.is_empty() {
        return Err(ReaderError::EmptyQuestion);
    }
    let q = encode_question(&model.params, model.ids(&q_tokens))?;
    let p = encode_passage(&model.params, model.ids(passage_tokens), &q.ids)?;
    Ok(logits(&model.params, &q, &p)?)
}

/// Every span `(i, j)` with `i ≤ j < i + max_span_len`, best first; ties by
/// start then end.
pub fn enumerate_spans<S: AsRef<str>>(
    start_logits: &[f64],
    end_logits: &[f64],
    max_span_len: usize,
    doc_id: usize,
    tokens: &[S],
) -> Vec<SpanPrediction> {
    let len = start_logits.len().min(end_logits.len()).min(tokens.len());
    let mut spans = Vec::with_capacity(len * max_span_len.min(len));
    for i in 0..len {
        for j in i..len.min(i + max_span_len) {
            spans.push(SpanPrediction {
                passage_doc_id: doc_id,
                start: i,
                end: j,
                raw_score: start_logits[i] + end_logits[j],
                text: join(&tokens[i..=j]),
            });
        }
    }
    spans.sort_by(|a, b| {
        b.raw_score
            .total_cmp(&a.raw_score)
            .then(a.start.cmp(&b.start))
            .then(a.end.cmp(&b.end))
    });
    spans
}

fn join<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Raw logits for one passage.
#[derive(Debug, Clone)]
pub struct PassageLogits {
    pub doc_id: usize,
    pub tokens: Vec<String>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

/// The best span of each passage, in passage order.
pub fn passage_bests(passages: &[PassageLogits], max_span_len: usize) -> Vec<SpanPrediction> {
    passages
        .iter()
        .filter_map(|p| {
            enumerate_spans(&p.start, &p.end, max_span_len, p.doc_id, &p.tokens)
                .into_iter()
                .next()
        })
        .collect()
}

/// Global argmax over per-passage bests; ties go to the earlier passage.
pub fn global_best(passages: &[PassageLogits], max_span_len: usize) -> Option<SpanPrediction> {
    let mut best: Option<SpanPrediction> = None;
    for span in passage_bests(passages, max_span_len) {
        if best.as_ref().is_none_or(|b| span.raw_score > b.raw_score) {
            best = Some(span);
        }
    }
    best
}

/// Per-passage best spans as answer candidates. Confidence is the softmax of
/// the raw scores across passages; order is confidence desc, then retrieval
/// order.
pub fn read(
    model: &ReaderModel,
    question: &str,
    results: &[RetrievalResult<'_>],
) -> Vec<AnswerCandidate> {
    read_with(
        model,
        question,
        results,
        TOP_K_PASSAGES,
        Parallelism::default(),
    )
}

pub fn read_with(
    model: &ReaderModel,
    question: &str,
    results: &[RetrievalResult<'_>],
    top_k_passages: usize,
    par: Parallelism,
) -> Vec<AnswerCandidate> {
    let q_tokens = tokenize(question, None).tokens;
    if q_tokens.is_empty() {
        return Vec::new();
    }
    let Ok(q) = encode_question(&model.params, model.ids(&q_tokens)) else {
        return Vec::new();
    };
    let passages: Vec<&RetrievalResult<'_>> = results
        .iter()
        .filter(|r| r.doc.kind == DocKind::Passage)
        .take(top_k_passages)
        .collect();
    let logits: Vec<Option<PassageLogits>> = par.map(&passages, |r| {
        let tokens = tokenize(&r.doc.value_field, None).tokens;
        if tokens.is_empty() {
            return None;
        }
        let p = encode_passage(&model.params, model.ids(&tokens), &q.ids).ok()?;
        let (start, end) = logits(&model.params, &q, &p).ok()?;
        Some(PassageLogits {
            doc_id: r.doc.doc_id,
            tokens,
            start,
            end,
        })
    });
    let logits: Vec<PassageLogits> = logits.into_iter().flatten().collect();
    let bests = passage_bests(&logits, model.max_span_len);
    let raw: Vec<f64> = bests.iter().map(|s| s.raw_score).collect();
    let probs = softmax_slice(&raw);
    let mut out: Vec<AnswerCandidate> = bests
        .into_iter()
        .zip(probs)
        .map(|(span, confidence)| {
            let origin = passages
                .iter()
                .find(|r| r.doc.doc_id == span.passage_doc_id)
                .map_or(String::new(), |r| r.doc.origin.clone());
            AnswerCandidate {
                answer: span.text,
                confidence,
                solver: Solver::Rr,
                provenance: format!("{origin} [{}..={}]", span.start, span.end),
            }
        })
        .collect();
    out.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    out
}

/// A reader training line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderExample {
    pub question: String,
    pub passage: String,
    pub answer_start_token: usize,
    pub answer_end_token: usize,
}

struct Prepared {
    question: Vec<usize>,
    passage: Vec<usize>,
    start: usize,
    end: usize,
}

/// Backprop a logit gradient `dl` through `H·W·q`.
fn bilinear_backward(
    name: &str,
    w: &Tensor,
    q: &[f64],
    states: &Tensor,
    dl: &[f64],
    dstates: &mut Tensor,
    dq: &mut [f64],
    grads: &mut Gradients,
) -> Result<(), NnError> {
    let (_, wq) = bilinear(w, q, states);
    let mut g = vec![0.0; wq.len()];
    for (t, d) in dl.iter().enumerate() {
        for (gi, hi) in g.iter_mut().zip(states.row(t)) {
            *gi += d * hi;
        }
        for (dh, wqi) in dstates.row_mut(t).iter_mut().zip(&wq) {
            *dh += d * wqi;
        }
    }
    let gw = grads.slot(name, w.shape());
    for (i, gi) in g.iter().enumerate() {
        for (gwij, qj) in gw.row_mut(i).iter_mut().zip(q) {
            *gwij += gi * qj;
        }
        for (dqj, wij) in dq.iter_mut().zip(w.row(i)) {
            *dqj += gi * wij;
        }
    }
    Ok(())
}

fn example_grad(params: &ModelParameters, ex: &Prepared) -> Result<(f64, Gradients), NnError> {
    let q = encode_question(params, ex.question.clone())?;
    let p = encode_passage(params, ex.passage.clone(), &q.ids)?;
    let (start, end) = logits(params, &q, &p)?;
    let ps = softmax_slice(&start);
    let pe = softmax_slice(&end);
    let loss = -ps[ex.start].max(PROB_FLOOR).ln() - pe[ex.end].max(PROB_FLOOR).ln();
    let mut ds = ps;
    ds[ex.start] -= 1.0;
    let mut de = pe;
    de[ex.end] -= 1.0;

    let mut grads = Gradients::new();
    let mut dstates = Tensor::zeros(p.states.shape());
    let mut dq = vec![0.0; q.q.len()];
    bilinear_backward(
        "start.w",
        params.get("start.w")?,
        &q.q,
        &p.states,
        &ds,
        &mut dstates,
        &mut dq,
        &mut grads,
    )?;
    bilinear_backward(
        "end.w",
        params.get("end.w")?,
        &q.q,
        &p.states,
        &de,
        &mut dstates,
        &mut dq,
        &mut grads,
    )?;

    let table = params.get("embed")?;
    let dxp = bidirectional_backward(
        CellKind::Gru,
        params,
        "passage",
        &p.cache,
        &dstates,
        &mut grads,
    )?;
    embedding_backward(
        table.shape(),
        &p.ids,
        &dxp,
        grads.slot("embed", table.shape()),
    )?;
    let dmatch = grads.slot("passage.match", &[dxp.cols()]);
    for (t, _) in p.matched.iter().enumerate().filter(|(_, m)| **m) {
        for (g, d) in dmatch.data_mut().iter_mut().zip(dxp.row(t)) {
            *g += d;
        }
    }

    let (du, dqstates) = attention_pool_backward(
        params.get("question.query")?.data(),
        &q.states,
        &q.weights,
        &dq,
    )?;
    grads.add("question.query", &Tensor::vector(du))?;
    let dxq = bidirectional_backward(
        CellKind::Gru,
        params,
        "question",
        &q.cache,
        &dqstates,
        &mut grads,
    )?;
    embedding_backward(
        table.shape(),
        &q.ids,
        &dxq,
        grads.slot("embed", table.shape()),
    )?;
    Ok((loss, grads))
}

fn prepare(i: usize, ex: &ReaderExample, vocab: &Vocabulary) -> Result<Prepared, ReaderError> {
    let question = tokenize(&ex.question, None).tokens;
    let passage = tokenize(&ex.passage, None).tokens;
    if question.is_empty() {
        return Err(ReaderError::EmptyQuestion);
    }
    if ex.answer_start_token > ex.answer_end_token || ex.answer_end_token >= passage.len() {
        return Err(ReaderError::SpanOutOfRange(i));
    }
    Ok(Prepared {
        question: vocab.encode(&question),
        passage: vocab.encode(&passage),
        start: ex.answer_start_token,
        end: ex.answer_end_token,
    })
}

/// Training loss of one line and its parameter gradients.
pub fn example_loss(
    params: &ModelParameters,
    vocab: &Vocabulary,
    ex: &ReaderExample,
) -> Result<(f64, Gradients), ReaderError> {
    Ok(example_grad(params, &prepare(0, ex, vocab)?)?)
}

/// SGD on start + end cross-entropy.
pub fn train_reader(
    data: &[ReaderExample],
    vocab: &Vocabulary,
    hyper: &Hyper,
) -> Result<TrainedModel, ReaderError> {
    if data.is_empty() {
        return Err(ReaderError::EmptyDataset);
    }
    let examples = data
        .iter()
        .enumerate()
        .map(|(i, ex)| prepare(i, ex, vocab))
        .collect::<Result<Vec<_>, _>>()?;
    let mut params = init_reader(vocab.len(), hyper)?;
    let epoch_losses = train_loop(&mut params, &examples, hyper, example_grad)?;
    Ok(TrainedModel {
        params,
        epoch_losses,
    })
}

/// Fraction of examples whose top-scoring span is exactly the gold span.
pub fn reader_accuracy(model: &ReaderModel, data: &[ReaderExample]) -> Result<f64, ReaderError> {
    let mut hit = 0;
    for ex in data {
        let tokens = tokenize(&ex.passage, None).tokens;
        let (s, e) = predict_logits(model, &ex.question, &tokens)?;
        let best = &enumerate_spans(&s, &e, model.max_span_len, 0, &tokens)[0];
        hit += (best.start == ex.answer_start_token && best.end == ex.answer_end_token) as usize;
    }
    Ok(hit as f64 / data.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use crate::retrieval::IndexedDocument;
    use proptest::prelude::*;

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(
            "who wrote hamlet it was shakespeare in 1603 the river avon".split(' '),
        )
    }

    fn small() -> Hyper {
        Hyper {
            dim: 6,
            hidden: 4,
            ..Hyper::default()
        }
    }

    fn model(seed: u64) -> ReaderModel {
        let h = Hyper { seed, ..small() };
        ReaderModel::new(init_reader(vocab().len(), &h).unwrap(), vocab()).unwrap()
    }

    fn toks(s: &str) -> Vec<String> {
        tokenize(s, None).tokens
    }

    #[test]
    fn logits_shape_and_determinism() {
        let m = model(0);
        let p = toks("hamlet was written by shakespeare");
        let a = predict_logits(&m, "who wrote hamlet", &p).unwrap();
        assert_eq!((a.0.len(), a.1.len()), (5, 5));
        assert_eq!(a, predict_logits(&m, "who wrote hamlet", &p).unwrap());
        assert!(matches!(
            predict_logits(&m, "who", &Vec::<String>::new()),
            Err(ReaderError::EmptyPassage)
        ));
    }

    #[test]
    fn enumeration_counts() {
        let one = enumerate_spans(&[0.3], &[0.1], 15, 0, &["x"]);
        assert_eq!(one.len(), 1);
        assert_eq!((one[0].start, one[0].end), (0, 0));
        assert_eq!(
            enumerate_spans(&[0.0; 3], &[0.0; 3], 2, 0, &["a", "b", "c"]).len(),
            5
        );
        let s = enumerate_spans(&[1.0, 0.0, 2.0], &[0.0, 3.0, 0.5], 15, 4, &["a", "b", "c"]);
        assert_eq!((s[0].start, s[0].end, s[0].raw_score), (0, 1, 4.0));
        assert_eq!(s[0].text, "a b");
    }

    #[test]
    fn shape_validation() {
        let mut p = init_reader(vocab().len(), &small()).unwrap();
        *p.get_mut("start.w").unwrap() = Tensor::zeros(&[3, 3]);
        assert!(matches!(
            ReaderModel::new(p, vocab()),
            Err(ReaderError::BadModel(_))
        ));
    }

    fn doc(id: usize, text: &str, kind: DocKind) -> IndexedDocument {
        IndexedDocument {
            doc_id: id,
            subject_field: vec![],
            value_field: text.into(),
            kind,
            origin: format!("passage:{id}"),
        }
    }

    #[test]
    fn read_single_and_multi() {
        let m = model(1);
        assert!(read(&m, "who wrote hamlet", &[]).is_empty());

        let d = doc(0, "shakespeare wrote hamlet", DocKind::Passage);
        let r = [RetrievalResult {
            doc: &d,
            score: 1.0,
        }];
        let out = read(&m, "who wrote hamlet", &r);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].confidence, 1.0);
        assert_eq!(out[0].solver, Solver::Rr);

        // identical passages tie at 0.5 each
        let d2 = doc(1, "shakespeare wrote hamlet", DocKind::Passage);
        let t = doc(2, "hamlet author shakespeare", DocKind::Triple);
        let r = [
            RetrievalResult {
                doc: &d,
                score: 2.0,
            },
            RetrievalResult {
                doc: &t,
                score: 1.5,
            },
            RetrievalResult {
                doc: &d2,
                score: 1.0,
            },
        ];
        let out = read(&m, "who wrote hamlet", &r);
        assert_eq!(out.len(), 2);
        assert!((out[0].confidence - 0.5).abs() < 1e-15);
        assert!((out[1].confidence - 0.5).abs() < 1e-15);
        assert!(out[0].provenance.starts_with("passage:0"));
    }

    #[test]
    fn modes_agree() {
        let m = model(2);
        let texts = [
            "shakespeare wrote hamlet in 1603",
            "the river avon",
            "it was 1603",
            "hamlet",
        ];
        let docs: Vec<IndexedDocument> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| doc(i, t, DocKind::Passage))
            .collect();
        let r: Vec<RetrievalResult<'_>> = docs
            .iter()
            .map(|d| RetrievalResult { doc: d, score: 1.0 })
            .collect();
        let s = read_with(&m, "who wrote hamlet", &r, 10, Parallelism::Sequential);
        let p = read_with(&m, "who wrote hamlet", &r, 10, Parallelism::Parallel);
        assert_eq!(s, p);
        let total: f64 = s.iter().map(|a| a.confidence).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_check() {
        let mut params = init_reader(vocab().len(), &small()).unwrap();
        let mut init = Initializer::new(3);
        for name in params.names().map(String::from).collect::<Vec<_>>() {
            if name.ends_with(".b") {
                let t = params.get_mut(&name).unwrap();
                *t = init.glorot(t.shape(), 2, 2);
            }
        }
        let v = vocab();
        let ex = Prepared {
            question: v.encode(&toks("who wrote hamlet")),
            passage: v.encode(&toks("it was shakespeare who wrote hamlet in 1603")),
            start: 2,
            end: 2,
        };
        let err = grad_check(|p| example_grad(p, &ex).unwrap(), &params, 1e-5);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn single_example_overfits() {
        let data = [ReaderExample {
            question: "who wrote hamlet".into(),
            passage: "it was shakespeare in 1603".into(),
            answer_start_token: 2,
            answer_end_token: 2,
        }];
        let h = Hyper {
            epochs: 300,
            lr: 0.05,
            ..small()
        };
        let t = train_reader(&data, &vocab(), &h).unwrap();
        assert!(t.epoch_losses.last().unwrap() <= &t.epoch_losses[0]);
        let m = ReaderModel::new(t.params, vocab()).unwrap();
        assert_eq!(reader_accuracy(&m, &data).unwrap(), 1.0);

        let zero = Hyper {
            epochs: 2,
            lr: 0.0,
            ..small()
        };
        let t = train_reader(&data, &vocab(), &zero).unwrap();
        assert_eq!(t.params, init_reader(vocab().len(), &zero).unwrap());

        let bad = [ReaderExample {
            answer_end_token: 9,
            ..data[0].clone()
        }];
        assert!(matches!(
            train_reader(&bad, &vocab(), &small()),
            Err(ReaderError::SpanOutOfRange(0))
        ));
    }

    fn logit_sets() -> impl Strategy<Value = Vec<PassageLogits>> {
        let passage = (1usize..20).prop_flat_map(|len| {
            (
                prop::collection::vec(-3i32..3, len),
                prop::collection::vec(-3i32..3, len),
            )
        });
        prop::collection::vec(passage, 1..6).prop_map(|ps| {
            ps.into_iter()
                .enumerate()
                .map(|(i, (s, e))| PassageLogits {
                    doc_id: i,
                    tokens: (0..s.len()).map(|t| format!("t{t}")).collect(),
                    start: s.into_iter().map(f64::from).collect(),
                    end: e.into_iter().map(f64::from).collect(),
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn global_argmax_is_exhaustive(sets in logit_sets(), max_len in 1usize..16) {
            // union of every span of every passage, first maximum wins
            let mut oracle: Option<(f64, usize, usize, usize)> = None;
            for p in &sets {
                for i in 0..p.start.len() {
                    for j in i..p.start.len().min(i + max_len) {
                        let s = p.start[i] + p.end[j];
                        if oracle.is_none_or(|o| s > o.0) {
                            oracle = Some((s, p.doc_id, i, j));
                        }
                    }
                }
            }
            let got = global_best(&sets, max_len).unwrap();
            let o = oracle.unwrap();
            prop_assert_eq!((got.raw_score, got.passage_doc_id, got.start, got.end), o);
        }

        #[test]
        fn weaker_passage_never_changes_answer(sets in logit_sets(), extra in logit_sets()) {
            let best = global_best(&sets, MAX_SPAN_LEN).unwrap();
            let mut more = sets.clone();
            for mut p in extra {
                let top = passage_bests(std::slice::from_ref(&p), MAX_SPAN_LEN)[0].raw_score;
                if top < best.raw_score {
                    p.doc_id += 100;
                    more.push(p);
                }
            }
            prop_assert_eq!(global_best(&more, MAX_SPAN_LEN).unwrap(), best);
        }
    }
}
