// SPDX-License-Identifier: Apache-2.0

//! Toy world shared by the integration tests: fixture files, models trained
//! from fixed seeds, and a config file pointing at both.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use openqa::jsonl;
use openqa::kb::load_triples;
use openqa::ld_solver::{
    scorer_accuracy, tagger_accuracy, train_relation_scorer, train_tagger, RelationExample,
    TaggedQuestion,
};
use openqa::nn::{Hyper, ModelParameters};
use openqa::pipeline::{build_vocabulary, load_qa, make_selector_data, QaPair};
use openqa::reader::{reader_accuracy, train_reader, ReaderExample, ReaderModel};
use openqa::retrieval::load_passages;
use openqa::selector::{selector_accuracy, train_selector, SelectorModel};
use openqa::sp_solver::load_templates;
use openqa::text::Vocabulary;
use openqa::{System, SystemConfig};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy")
}

pub fn fixture(name: &str) -> PathBuf {
    fixture_dir().join(name)
}

pub fn qa() -> Vec<QaPair> {
    load_qa(&fixture("qa.jsonl")).unwrap()
}

pub fn hyper() -> Hyper {
    Hyper {
        epochs: 150,
        seed: 11,
        ..Hyper::default()
    }
}

/// Reader lines embed the gold passage among distractors, so each epoch
/// already sees many more tokens.
pub fn reader_hyper() -> Hyper {
    Hyper {
        epochs: 30,
        ..hyper()
    }
}

pub struct ToyWorld {
    /// Holds the config, vocabulary and trained parameters.
    pub dir: tempfile::TempDir,
    pub config_path: PathBuf,
    pub system: System,
    pub vocab: Vocabulary,
    pub tagger: ModelParameters,
    pub scorer: ModelParameters,
    pub reader: ModelParameters,
    pub selector: ModelParameters,
    pub train_accuracy: [f64; 4],
    pub elapsed: Duration,
}

/// Builds the vocabulary, trains every model from `hyper()` and writes a
/// config file referencing the results.
pub fn build_toy_world() -> ToyWorld {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let sources: Vec<PathBuf> = [
        "kb.tsv",
        "passages.jsonl",
        "qa.jsonl",
        "tagger.jsonl",
        "scorer.jsonl",
        "reader.jsonl",
    ]
    .iter()
    .map(|n| fixture(n))
    .collect();
    let refs: Vec<&Path> = sources.iter().map(PathBuf::as_path).collect();
    let vocab = build_vocabulary(&refs).unwrap();
    let hyper = hyper();

    let tagger_rows: Vec<TaggedQuestion> = jsonl::read(&fixture("tagger.jsonl")).unwrap();
    let scorer_rows: Vec<RelationExample> = jsonl::read(&fixture("scorer.jsonl")).unwrap();
    let reader_rows: Vec<ReaderExample> = jsonl::read(&fixture("reader.jsonl")).unwrap();
    let tagger = train_tagger(&tagger_rows, &vocab, &hyper).unwrap().params;
    let scorer = train_relation_scorer(&scorer_rows, &vocab, &hyper)
        .unwrap()
        .params;
    let reader = train_reader(&reader_rows, &vocab, &reader_hyper())
        .unwrap()
        .params;
    let reader_model = ReaderModel::new(reader.clone(), vocab.clone()).unwrap();

    let kb = load_triples(&fixture("kb.tsv")).unwrap();
    let templates = load_templates(&fixture("templates.jsonl")).unwrap();
    let passages = load_passages(&fixture("passages.jsonl")).unwrap();
    let mut system = System::new(kb, templates, &passages, vocab.clone()).unwrap();
    system.set_ld_models(Some(tagger.clone()), Some(scorer.clone()));
    system.set_reader(Some(reader_model.clone()));

    let data = make_selector_data(&system, &qa()).unwrap();
    let selector = train_selector(&data.examples, &vocab, &hyper)
        .unwrap()
        .params;
    let selector_model = SelectorModel {
        params: selector.clone(),
        vocab: vocab.clone(),
    };
    system.set_selector(Some(selector_model.clone()));

    let train_accuracy = [
        tagger_accuracy(&tagger, &vocab, &tagger_rows).unwrap(),
        scorer_accuracy(&scorer, &vocab, &scorer_rows).unwrap(),
        reader_accuracy(&reader_model, &reader_rows).unwrap(),
        selector_accuracy(&selector_model, &data.examples).unwrap(),
    ];

    let save = |name: &str, p: &ModelParameters| {
        let path = dir.path().join(name);
        p.save(&path).unwrap();
        path
    };
    let vocab_path = dir.path().join("vocab.txt");
    vocab.save(&vocab_path).unwrap();
    let mut config = SystemConfig::new(fixture("kb.tsv"));
    config.passages_path = Some(fixture("passages.jsonl"));
    config.templates_path = Some(fixture("templates.jsonl"));
    config.vocab_path = Some(vocab_path);
    config.tagger_path = Some(save("tagger.json", &tagger));
    config.scorer_path = Some(save("scorer.json", &scorer));
    config.reader_path = Some(save("reader.json", &reader));
    config.selector_path = Some(save("selector.json", &selector));
    config.hyper = hyper;
    let config_path = dir.path().join("config.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    ToyWorld {
        dir,
        config_path,
        system,
        vocab,
        tagger,
        scorer,
        reader,
        selector,
        train_accuracy,
        elapsed: start.elapsed(),
    }
}
