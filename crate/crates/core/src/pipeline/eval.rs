// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{PipelineError, System};
use crate::jsonl;
use crate::par::Parallelism;
use crate::selector::SelectorExample;
use crate::sp_solver::Solver;
use crate::text::{normalize, tokenize, Vocabulary, ENTITY_PLACEHOLDER};

/// A line of a QA file.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

pub fn load_qa(path: &Path) -> Result<Vec<QaPair>, PipelineError> {
    Ok(jsonl::read(path)?)
}

/// Seeded shuffle, then the first `round(fraction · n)` items train and the
/// rest are held out.
pub fn split_dataset<T: Clone>(
    items: &[T],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>), PipelineError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(PipelineError::BadFraction(fraction));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut SplitMix64::seed_from_u64(seed));
    let cut = (fraction * items.len() as f64).round() as usize;
    let pick = |ix: &[usize]| ix.iter().map(|&i| items[i].clone()).collect();
    Ok((pick(&order[..cut]), pick(&order[cut..])))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Fraction of questions where the solver's top candidate was correct.
    pub per_solver_hit_rate: BTreeMap<Solver, f64>,
}

fn matches(candidate: &str, gold: &str) -> bool {
    normalize(candidate) == normalize(gold)
}

pub fn evaluate(system: &System, dataset: &[QaPair]) -> Result<EvalReport, PipelineError> {
    evaluate_with(system, dataset, Parallelism::default())
}

/// Exact match after normalization. Questions are answered concurrently
/// under `Parallelism::Parallel`.
pub fn evaluate_with(
    system: &System,
    dataset: &[QaPair],
    par: Parallelism,
) -> Result<EvalReport, PipelineError> {
    if dataset.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let outcomes = par.map(dataset, |pair| {
        let Ok(r) = system.ask(&pair.question) else {
            return (false, Vec::new());
        };
        let correct = r
            .answer
            .as_deref()
            .is_some_and(|a| matches(a, &pair.answer));
        let hits: Vec<Solver> = Solver::ALL
            .into_iter()
            .filter(|s| {
                r.candidates
                    .get(s)
                    .and_then(|c| c.first())
                    .is_some_and(|c| matches(&c.answer, &pair.answer))
            })
            .collect();
        (correct, hits)
    });
    let total = dataset.len();
    let correct = outcomes.iter().filter(|(c, _)| *c).count();
    let per_solver_hit_rate = Solver::ALL
        .into_iter()
        .map(|s| {
            let n = outcomes.iter().filter(|(_, h)| h.contains(&s)).count();
            (s, n as f64 / total as f64)
        })
        .collect();
    Ok(EvalReport {
        total,
        correct,
        accuracy: correct as f64 / total as f64,
        per_solver_hit_rate,
    })
}

/// Selector training lines derived from solver output.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelectorData {
    pub examples: Vec<SelectorExample>,
    pub skipped_too_few: usize,
    pub skipped_no_match: usize,
}

impl SelectorData {
    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        Ok(jsonl::write(path, &self.examples)?)
    }
}

/// Runs the solvers on every question. A question yields a line when the
/// solvers' top candidates number at least two and one of them matches the
/// gold answer; the first match is the gold index.
pub fn make_selector_data(
    system: &System,
    dataset: &[QaPair],
) -> Result<SelectorData, PipelineError> {
    if dataset.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let mut out = SelectorData::default();
    for pair in dataset {
        let (candidates, _) = system.solve_all(&pair.question);
        let tops: Vec<String> = Solver::ALL
            .iter()
            .filter_map(|s| candidates.get(s).and_then(|c| c.first()))
            .map(|c| c.answer.clone())
            .collect();
        if tops.len() < 2 {
            out.skipped_too_few += 1;
            continue;
        }
        match tops.iter().position(|a| matches(a, &pair.answer)) {
            Some(gold) => out.examples.push(SelectorExample {
                question: pair.question.clone(),
                candidates: tops,
                gold,
            }),
            None => out.skipped_no_match += 1,
        }
    }
    Ok(out)
}

fn collect_strings(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::String(s) => out.push(s.clone()),
        Value::Array(items) => items.iter().for_each(|i| collect_strings(i, out)),
        Value::Object(map) => map.values().for_each(|i| collect_strings(i, out)),
        _ => {}
    }
}

/// Vocabulary over every token in the given files: each string value of
/// JSON Lines files (`.jsonl`), every line of other files. The entity
/// placeholder is always included.
pub fn build_vocabulary(paths: &[&Path]) -> Result<Vocabulary, PipelineError> {
    let mut texts = vec![ENTITY_PLACEHOLDER.to_string()];
    for path in paths {
        let content = fs::read_to_string(path)?;
        let is_jsonl = path.extension().is_some_and(|e| e == "jsonl");
        for line in content
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        {
            if is_jsonl {
                let v: Value = serde_json::from_str(line)
                    .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
                collect_strings(&v, &mut texts);
            } else {
                texts.push(line.replace('\t', " "));
            }
        }
    }
    let mut tokens = vec![ENTITY_PLACEHOLDER.to_string()];
    for t in &texts[1..] {
        if t == ENTITY_PLACEHOLDER {
            continue;
        }
        tokens.extend(tokenize(t, None).tokens);
    }
    Ok(Vocabulary::from_tokens(tokens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{KnowledgeBase, Triple};
    use crate::sp_solver::QuestionTemplate;
    use proptest::prelude::*;

    #[test]
    fn split_sizes() {
        for (n, want) in [(10, 7), (100, 70), (1000, 700), (1, 1), (0, 0)] {
            let items: Vec<usize> = (0..n).collect();
            let (train, dev) = split_dataset(&items, 0.7, 3).unwrap();
            assert_eq!(train.len(), want);
            assert_eq!(train.len() + dev.len(), n);
        }
        assert!(matches!(
            split_dataset(&[1], 1.0, 0),
            Err(PipelineError::BadFraction(_))
        ));
        assert!(matches!(
            split_dataset(&[1], 0.0, 0),
            Err(PipelineError::BadFraction(_))
        ));
    }

    proptest! {
        #[test]
        fn split_partitions(n in 0usize..200, seed in any::<u64>()) {
            let items: Vec<usize> = (0..n).collect();
            let (train, dev) = split_dataset(&items, 0.7, seed).unwrap();
            prop_assert_eq!(split_dataset(&items, 0.7, seed).unwrap(), (train.clone(), dev.clone()));
            let mut all: Vec<usize> = train.iter().chain(&dev).copied().collect();
            all.sort();
            prop_assert_eq!(all, items);
        }
    }

    fn system() -> System {
        let kb = KnowledgeBase::from_triples([
            Triple::new("hamlet", "author", "shakespeare").unwrap(),
            Triple::new("macbeth", "author", "shakespeare").unwrap(),
            Triple::new("faust", "author", "goethe").unwrap(),
        ]);
        let t = vec![QuestionTemplate::new("^who wrote (.+)$", "author", Some(1), 0.9).unwrap()];
        System::new(kb, t, &[], Vocabulary::default()).unwrap()
    }

    fn qa(q: &str, a: &str) -> QaPair {
        QaPair {
            question: q.into(),
            answer: a.into(),
        }
    }

    #[test]
    fn evaluation_counts() {
        let s = system();
        let data = [
            qa("who wrote hamlet", "Shakespeare."),
            qa("who wrote faust", "goethe"),
            qa("who wrote faust", "schiller"),
        ];
        let r = evaluate(&s, &data).unwrap();
        assert_eq!((r.total, r.correct), (3, 2));
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.per_solver_hit_rate[&Solver::Sp] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_solver_hit_rate[&Solver::Rr], 0.0);

        let a = evaluate(&s, &data[..1]).unwrap();
        let b = evaluate(&s, &data[1..]).unwrap();
        assert_eq!(a.correct + b.correct, r.correct);
        let seq = evaluate_with(&s, &data, Parallelism::Sequential).unwrap();
        assert_eq!(seq, r);
        assert!(matches!(
            evaluate(&s, &[]),
            Err(PipelineError::EmptyDataset)
        ));
    }

    #[test]
    fn selector_data_skips() {
        // only one solver is active, so every question has too few candidates
        let d = make_selector_data(&system(), &[qa("who wrote hamlet", "shakespeare")]).unwrap();
        assert!(d.examples.is_empty());
        assert_eq!(d.skipped_too_few, 1);
    }

    #[test]
    fn vocabulary_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let kb = dir.path().join("kb.tsv");
        fs::write(&kb, "# comment\nNew York\tcountry\tUSA\n").unwrap();
        let qa = dir.path().join("qa.jsonl");
        fs::write(&qa, "{\"question\": \"Where is New York?\", \"answer\": \"usa\"}\n{\"pattern\": [\"<e>\", \"x\"]}\n").unwrap();
        let v = build_vocabulary(&[&kb, &qa]).unwrap();
        for t in ["new", "york", "country", "usa", "where", "is", "<e>", "x"] {
            assert!(v.id(t) >= 4, "{t} missing");
        }
        assert_eq!(v.token(4), Some("<e>"));
    }
}
