// SPDX-License-Identifier: Apache-2.0

//! Transformer answer selector.
//!
//! Each candidate is spliced with the question as
//! `[CLS] question [SEP] answer [SEP]`, encoded independently, and scored by a
//! linear head on the `[CLS]` position. Scores are softmaxed across the
//! candidates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{
    dot, embedding_backward, embedding_lookup, encoder_backward, encoder_forward,
    init_encoder_layer, softmax_slice, train_loop, EncoderCache, Gradients, Hyper, Initializer,
    ModelParameters, NnError, Tensor, TrainedModel, PROB_FLOOR,
};
use crate::par::Parallelism;
use crate::sp_solver::AnswerCandidate;
use crate::text::{tokenize, Vocabulary, CLS, SEP};

pub const MAX_LEN: usize = 64;

#[derive(Debug, Error)]
pub enum SelectorError {
    #[error("question and answer must both be non-empty")]
    EmptyInput,
    #[error("sequence of {0} ids exceeds the maximum length")]
    SequenceTooLong(usize),
    #[error("no candidates")]
    NoCandidates,
    #[error("training example {0}: gold index out of range")]
    GoldOutOfRange(usize),
    #[error("training example {0}: needs at least two candidates")]
    TooFewCandidates(usize),
    #[error("empty training set")]
    EmptyDataset,
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone)]
pub struct SelectorModel {
    pub params: ModelParameters,
    pub vocab: Vocabulary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionResult {
    pub probabilities: Vec<f64>,
    pub chosen: usize,
    pub answer: AnswerCandidate,
}

pub fn init_selector(vocab_size: usize, hyper: &Hyper) -> Result<ModelParameters, NnError> {
    let d = hyper.dim;
    let mut params = ModelParameters::new(hyper.seed);
    let mut init = Initializer::new(hyper.seed);
    params.insert("embed", init.matrix(vocab_size, d))?;
    params.insert("pos", init.matrix(MAX_LEN, d))?;
    for l in 0..hyper.layers {
        init_encoder_layer(&mut params, &mut init, &format!("enc{l}"), d, 2 * d)?;
    }
    params.insert("head.w", init.matrix(1, d))?;
    params.insert("head.b", Tensor::zeros(&[1]))?;
    params.set_arch("model", "selector");
    params.set_arch("vocab", vocab_size);
    params.set_arch("dim", d);
    params.set_arch("heads", hyper.heads);
    params.set_arch("layers", hyper.layers);
    params.set_arch("max_len", MAX_LEN);
    Ok(params)
}

/// `[CLS] q [SEP] a [SEP]`, cut to [`MAX_LEN`] by dropping question-tail
/// tokens first, then answer-tail tokens.
pub fn build_sequence(
    question: &str,
    answer: &str,
    vocab: &Vocabulary,
) -> Result<Vec<usize>, SelectorError> {
    let q = tokenize(question, None).tokens;
    let a = tokenize(answer, None).tokens;
    if q.is_empty() || a.is_empty() {
        return Err(SelectorError::EmptyInput);
    }
    let budget = MAX_LEN - 3;
    let a_keep = a.len().min(budget);
    let q_keep = q.len().min(budget - a_keep);
    let mut ids = Vec::with_capacity(3 + q_keep + a_keep);
    ids.push(CLS);
    ids.extend(vocab.encode(&q[..q_keep]));
    ids.push(SEP);
    ids.extend(vocab.encode(&a[..a_keep]));
    ids.push(SEP);
    Ok(ids)
}

struct Forward {
    ids: Vec<usize>,
    caches: Vec<EncoderCache>,
    top: Tensor,
    score: f64,
}

fn layers(params: &ModelParameters) -> usize {
    params.arch_usize("layers").unwrap_or(1)
}

fn heads(params: &ModelParameters) -> usize {
    params.arch_usize("heads").unwrap_or(2)
}

fn forward(params: &ModelParameters, ids: &[usize]) -> Result<Forward, SelectorError> {
    if ids.is_empty() {
        return Err(SelectorError::EmptyInput);
    }
    if ids.len() > MAX_LEN {
        return Err(SelectorError::SequenceTooLong(ids.len()));
    }
    let embed = params.get("embed")?;
    let ids: Vec<usize> = ids
        .iter()
        .map(|&i| {
            if i < embed.rows() {
                i
            } else {
                crate::text::UNK
            }
        })
        .collect();
    let positions: Vec<usize> = (0..ids.len()).collect();
    let mut x = embedding_lookup(embed, &ids)?;
    x.add_assign(&embedding_lookup(params.get("pos")?, &positions)?)?;
    let mut caches = Vec::new();
    for l in 0..layers(params) {
        let (y, cache) = encoder_forward(params, &format!("enc{l}"), &x, heads(params))?;
        caches.push(cache);
        x = y;
    }
    let score = dot(params.get("head.w")?.data(), x.row(0)) + params.get("head.b")?.data()[0];
    Ok(Forward {
        ids,
        caches,
        top: x,
        score,
    })
}

/// Accumulate `d_score · ∂score/∂params`.
fn backward(
    params: &ModelParameters,
    fwd: &Forward,
    d_score: f64,
    grads: &mut Gradients,
) -> Result<(), NnError> {
    let head = params.get("head.w")?;
    let mut gw = Tensor::zeros(head.shape());
    for (g, x) in gw.data_mut().iter_mut().zip(fwd.top.row(0)) {
        *g = d_score * x;
    }
    grads.add("head.w", &gw)?;
    grads.add("head.b", &Tensor::vector(vec![d_score]))?;
    let mut dx = Tensor::zeros(fwd.top.shape());
    for (g, w) in dx.row_mut(0).iter_mut().zip(head.data()) {
        *g = d_score * w;
    }
    for l in (0..fwd.caches.len()).rev() {
        dx = encoder_backward(params, &format!("enc{l}"), &fwd.caches[l], &dx, grads)?;
    }
    let embed = params.get("embed")?;
    embedding_backward(
        embed.shape(),
        &fwd.ids,
        &dx,
        grads.slot("embed", embed.shape()),
    )?;
    let pos = params.get("pos")?;
    let positions: Vec<usize> = (0..fwd.ids.len()).collect();
    embedding_backward(pos.shape(), &positions, &dx, grads.slot("pos", pos.shape()))
}

pub fn score_sequence(model: &SelectorModel, ids: &[usize]) -> Result<f64, SelectorError> {
    Ok(forward(&model.params, ids)?.score)
}

/// Softmax over independently scored candidates; ties choose the lowest index.
pub fn select(
    model: &SelectorModel,
    question: &str,
    candidates: &[AnswerCandidate],
) -> Result<SelectionResult, SelectorError> {
    select_with(model, question, candidates, Parallelism::default())
}

pub fn select_with(
    model: &SelectorModel,
    question: &str,
    candidates: &[AnswerCandidate],
    par: Parallelism,
) -> Result<SelectionResult, SelectorError> {
    if candidates.is_empty() {
        return Err(SelectorError::NoCandidates);
    }
    let scores = par
        .map(candidates, |c| {
            let ids = build_sequence(question, &c.answer, &model.vocab)?;
            score_sequence(model, &ids)
        })
        .into_iter()
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(from_scores(&scores, candidates))
}

fn from_scores(scores: &[f64], candidates: &[AnswerCandidate]) -> SelectionResult {
    let probabilities = softmax_slice(scores);
    let mut chosen = 0;
    for (i, p) in probabilities.iter().enumerate() {
        if *p > probabilities[chosen] {
            chosen = i;
        }
    }
    SelectionResult {
        answer: candidates[chosen].clone(),
        probabilities,
        chosen,
    }
}

/// A selector training line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorExample {
    pub question: String,
    pub candidates: Vec<String>,
    pub gold: usize,
}

struct Prepared {
    sequences: Vec<Vec<usize>>,
    gold: usize,
}

fn example_grad(params: &ModelParameters, ex: &Prepared) -> Result<(f64, Gradients), NnError> {
    let fwds = ex
        .sequences
        .iter()
        .map(|ids| forward(params, ids))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| match e {
            SelectorError::Nn(e) => e,
            other => NnError::ShapeMismatch(other.to_string()),
        })?;
    let scores: Vec<f64> = fwds.iter().map(|f| f.score).collect();
    let probs = softmax_slice(&scores);
    let loss = -probs[ex.gold].max(PROB_FLOOR).ln();
    let mut grads = Gradients::new();
    for (i, f) in fwds.iter().enumerate() {
        let d = probs[i] - if i == ex.gold { 1.0 } else { 0.0 };
        backward(params, f, d, &mut grads)?;
    }
    Ok((loss, grads))
}

fn prepare(i: usize, ex: &SelectorExample, vocab: &Vocabulary) -> Result<Prepared, SelectorError> {
    if ex.candidates.len() < 2 {
        return Err(SelectorError::TooFewCandidates(i));
    }
    if ex.gold >= ex.candidates.len() {
        return Err(SelectorError::GoldOutOfRange(i));
    }
    let sequences = ex
        .candidates
        .iter()
        .map(|c| build_sequence(&ex.question, c, vocab))
        .collect::<Result<_, _>>()?;
    Ok(Prepared {
        sequences,
        gold: ex.gold,
    })
}

/// Training loss of one line and its parameter gradients.
pub fn example_loss(
    params: &ModelParameters,
    vocab: &Vocabulary,
    ex: &SelectorExample,
) -> Result<(f64, Gradients), SelectorError> {
    Ok(example_grad(params, &prepare(0, ex, vocab)?)?)
}

/// SGD on cross-entropy of the candidate softmax against the gold index.
pub fn train_selector(
    data: &[SelectorExample],
    vocab: &Vocabulary,
    hyper: &Hyper,
) -> Result<TrainedModel, SelectorError> {
    if data.is_empty() {
        return Err(SelectorError::EmptyDataset);
    }
    let examples = data
        .iter()
        .enumerate()
        .map(|(i, ex)| prepare(i, ex, vocab))
        .collect::<Result<Vec<_>, _>>()?;
    let mut params = init_selector(vocab.len(), hyper)?;
    let epoch_losses = train_loop(&mut params, &examples, hyper, example_grad)?;
    Ok(TrainedModel {
        params,
        epoch_losses,
    })
}

/// Fraction of examples whose gold candidate is chosen.
pub fn selector_accuracy(
    model: &SelectorModel,
    data: &[SelectorExample],
) -> Result<f64, SelectorError> {
    let mut hit = 0;
    for ex in data {
        let cands: Vec<AnswerCandidate> =
            ex.candidates.iter().map(|c| plain_candidate(c)).collect();
        hit += (select(model, &ex.question, &cands)?.chosen == ex.gold) as usize;
    }
    Ok(hit as f64 / data.len().max(1) as f64)
}

fn plain_candidate(answer: &str) -> AnswerCandidate {
    AnswerCandidate {
        answer: answer.to_string(),
        confidence: 0.0,
        solver: crate::sp_solver::Solver::Sp,
        provenance: String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use proptest::prelude::*;

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens("who wrote hamlet shakespeare 1603 avon paris france".split(' '))
    }

    fn small() -> Hyper {
        Hyper {
            dim: 8,
            heads: 2,
            ..Hyper::default()
        }
    }

    fn model(seed: u64) -> SelectorModel {
        SelectorModel {
            params: init_selector(vocab().len(), &Hyper { seed, ..small() }).unwrap(),
            vocab: vocab(),
        }
    }

    #[test]
    fn sequence_layout() {
        let v = vocab();
        let ids = build_sequence("who wrote", "hamlet", &v).unwrap();
        assert_eq!(
            ids,
            [CLS, v.id("who"), v.id("wrote"), SEP, v.id("hamlet"), SEP]
        );
        assert_eq!(
            build_sequence("zzz", "hamlet", &v).unwrap()[1],
            crate::text::UNK
        );
        assert!(matches!(
            build_sequence("", "x", &v),
            Err(SelectorError::EmptyInput)
        ));

        let long_q = vec!["who"; 100].join(" ");
        let ids = build_sequence(&long_q, "hamlet shakespeare", &v).unwrap();
        assert_eq!(ids.len(), MAX_LEN);
        assert_eq!(
            &ids[MAX_LEN - 3..],
            [v.id("hamlet"), v.id("shakespeare"), SEP]
        );
        let long_a = vec!["paris"; 100].join(" ");
        let ids = build_sequence("who", &long_a, &v).unwrap();
        assert_eq!(ids.len(), MAX_LEN);
        assert_eq!(ids[1], SEP);
    }

    #[test]
    fn scoring_basics() {
        let m = model(0);
        let ids = build_sequence("who wrote hamlet", "shakespeare", &vocab()).unwrap();
        let s = score_sequence(&m, &ids).unwrap();
        assert!(s.is_finite());
        assert_eq!(s, score_sequence(&m, &ids).unwrap());
        assert!(matches!(
            score_sequence(&m, &vec![CLS; 65]),
            Err(SelectorError::SequenceTooLong(65))
        ));
    }

    #[test]
    fn selection_rules() {
        let m = model(1);
        let one = select(&m, "who wrote hamlet", &[plain_candidate("shakespeare")]).unwrap();
        assert_eq!(one.probabilities, [1.0]);
        let same = [plain_candidate("avon"), plain_candidate("avon")];
        let r = select(&m, "who wrote hamlet", &same).unwrap();
        assert_eq!(r.probabilities[0], r.probabilities[1]);
        assert_eq!(r.chosen, 0);
        assert!(matches!(
            select(&m, "q", &[]),
            Err(SelectorError::NoCandidates)
        ));
    }

    #[test]
    fn gradient_check_multi_layer() {
        let h = Hyper {
            layers: 2,
            ..small()
        };
        let mut params = init_selector(vocab().len(), &h).unwrap();
        let mut init = Initializer::new(4);
        for name in params.names().map(String::from).collect::<Vec<_>>() {
            if name.ends_with(".b") || name.ends_with(".bias") {
                let t = params.get_mut(&name).unwrap();
                *t = init.glorot(t.shape(), 2, 2);
            }
        }
        let v = vocab();
        let ex = Prepared {
            sequences: vec![
                build_sequence("who wrote hamlet", "shakespeare", &v).unwrap(),
                build_sequence("who wrote hamlet", "paris france", &v).unwrap(),
                build_sequence("who wrote hamlet", "1603", &v).unwrap(),
            ],
            gold: 0,
        };
        let err = grad_check(|p| example_grad(p, &ex).unwrap(), &params, 1e-5);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn single_example_overfits() {
        let data = [SelectorExample {
            question: "who wrote hamlet".into(),
            candidates: vec!["1603".into(), "shakespeare".into(), "avon".into()],
            gold: 1,
        }];
        let h = Hyper {
            epochs: 300,
            lr: 0.05,
            ..small()
        };
        let t = train_selector(&data, &vocab(), &h).unwrap();
        assert!(t.epoch_losses.last().unwrap() <= &t.epoch_losses[0]);
        let m = SelectorModel {
            params: t.params,
            vocab: vocab(),
        };
        let cands: Vec<_> = data[0]
            .candidates
            .iter()
            .map(|c| plain_candidate(c))
            .collect();
        let r = select(&m, &data[0].question, &cands).unwrap();
        assert_eq!(r.chosen, 1);
        assert!(r.probabilities[1] > 0.9);

        let zero = Hyper {
            epochs: 2,
            lr: 0.0,
            ..small()
        };
        let t = train_selector(&data, &vocab(), &zero).unwrap();
        assert_eq!(t.params, init_selector(vocab().len(), &zero).unwrap());

        let bad = [SelectorExample {
            gold: 3,
            ..data[0].clone()
        }];
        assert!(matches!(
            train_selector(&bad, &vocab(), &small()),
            Err(SelectorError::GoldOutOfRange(0))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn permutation_and_normalization(
            words in prop::collection::vec(prop::sample::select(vec!["hamlet", "avon", "paris", "1603", "who"]), 1..5),
            seed in 0u64..4,
            rot in 0usize..4,
        ) {
            let m = model(seed);
            let cands: Vec<AnswerCandidate> = words.iter().map(|w| plain_candidate(w)).collect();
            let r = select(&m, "who wrote hamlet", &cands).unwrap();
            prop_assert!((r.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let k = rot % cands.len();
            let mut rotated = cands.clone();
            rotated.rotate_left(k);
            let r2 = select(&m, "who wrote hamlet", &rotated).unwrap();
            for i in 0..cands.len() {
                prop_assert!((r2.probabilities[i] - r.probabilities[(i + k) % cands.len()]).abs() < 1e-12);
            }
            prop_assert_eq!(&r2.answer.answer, &r.answer.answer);
            prop_assert_eq!(
                select_with(&m, "who wrote hamlet", &cands, Parallelism::Sequential).unwrap(),
                select_with(&m, "who wrote hamlet", &cands, Parallelism::Parallel).unwrap()
            );
        }

        #[test]
        fn shift_invariance(scores in prop::collection::vec(-5.0f64..5.0, 1..6), shift in -50.0f64..50.0) {
            let cands: Vec<AnswerCandidate> = (0..scores.len()).map(|i| plain_candidate(&format!("a{i}"))).collect();
            let a = from_scores(&scores, &cands);
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let b = from_scores(&shifted, &cands);
            prop_assert_eq!(a.chosen, b.chosen);
            for (x, y) in a.probabilities.iter().zip(&b.probabilities) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
