// SPDX-License-Identifier: Apache-2.0

//! Orchestration: loading a system from its config, answering questions by
//! running the three solvers side by side, evaluation, and the HTTP service.

mod config;
mod eval;
mod service;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{SystemConfig, DEFAULT_ADDR, DEFAULT_TIMEOUT_MS};
pub use eval::{
    build_vocabulary, evaluate, evaluate_with, load_qa, make_selector_data, split_dataset,
    EvalReport, QaPair, SelectorData,
};
pub use service::{router, serve};

use crate::jsonl::JsonlError;
use crate::kb::{load_triples, EntityDictionary, KbError, KnowledgeBase};
use crate::ld_solver::{solve_ld, LdError, LdModels};
use crate::nn::{ModelParameters, NnError};
use crate::par::Parallelism;
use crate::reader::{read_with, ReaderError, ReaderModel, TOP_K_PASSAGES};
use crate::retrieval::{
    build_index, corpus_documents, load_passages, InvertedIndex, Passage, RetrievalError,
};
use crate::selector::{select, SelectorError, SelectorModel};
use crate::sp_solver::{
    load_templates, solve_sp, AnswerCandidate, QuestionTemplate, Solver, TemplateError,
};
use crate::text::{normalize, Vocabulary};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
    #[error("config: {0}")]
    Config(String),
    #[error("{what} file not found: {path}")]
    MissingFile { what: &'static str, path: String },
    #[error("models are configured but no vocabulary is")]
    MissingVocabulary,
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Ld(#[from] LdError),
    #[error(transparent)]
    Reader(#[from] ReaderError),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error(transparent)]
    File(#[from] JsonlError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Response of [`System::ask`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskResponse {
    pub answer: Option<String>,
    pub confidence: f64,
    /// `sp`, `ld`, `rr`, or `selector`; null when there is no answer.
    pub solver: Option<String>,
    pub candidates: BTreeMap<Solver, Vec<AnswerCandidate>>,
    /// Wall-clock milliseconds per solver.
    pub timings: BTreeMap<Solver, f64>,
}

#[derive(Clone)]
struct Parts {
    kb: KnowledgeBase,
    dict: EntityDictionary,
    templates: Vec<QuestionTemplate>,
    index: InvertedIndex,
    vocab: Vocabulary,
    tagger: Option<ModelParameters>,
    scorer: Option<ModelParameters>,
    reader: Option<ReaderModel>,
    selector: Option<SelectorModel>,
    retrieval_k: usize,
}

impl Parts {
    fn run(&self, solver: Solver, question: &str) -> Vec<AnswerCandidate> {
        match solver {
            Solver::Sp => solve_sp(question, &self.kb, &self.dict, &self.templates),
            Solver::Ld => match (&self.tagger, &self.scorer) {
                (Some(tagger), Some(scorer)) => {
                    let models = LdModels {
                        tagger,
                        scorer,
                        vocab: &self.vocab,
                    };
                    solve_ld(question, &self.kb, &self.dict, &models)
                }
                _ => Vec::new(),
            },
            Solver::Rr => match &self.reader {
                // Solvers run on their own threads, possibly while every pool
                // worker is blocked waiting on them, so they stay off the pool.
                Some(reader) => {
                    let seq = Parallelism::Sequential;
                    let hits = self.index.search_with(question, self.retrieval_k, seq);
                    read_with(reader, question, &hits, TOP_K_PASSAGES, seq)
                }
                None => Vec::new(),
            },
        }
    }
}

/// A loaded question-answering system. Cloning is cheap; clones share the
/// same immutable resources.
#[derive(Clone)]
pub struct System {
    parts: Arc<Parts>,
    timeout: Duration,
    parallelism: Parallelism,
}

impl System {
    /// A system over `kb` with the given templates and passages and no neural
    /// models. The index is built from the KB and passages.
    pub fn new(
        kb: KnowledgeBase,
        templates: Vec<QuestionTemplate>,
        passages: &[Passage],
        vocab: Vocabulary,
    ) -> Result<Self, PipelineError> {
        let dict = EntityDictionary::build(&kb);
        let index = build_index(corpus_documents(&kb, passages, &dict)?)?;
        Ok(System {
            parts: Arc::new(Parts {
                kb,
                dict,
                templates,
                index,
                vocab,
                tagger: None,
                scorer: None,
                reader: None,
                selector: None,
                retrieval_k: crate::retrieval::DEFAULT_TOP_K,
            }),
            timeout: Duration::from_millis(DEFAULT_TIMEOUT_MS),
            parallelism: Parallelism::default(),
        })
    }

    pub fn from_config(config: &SystemConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let kb = load_triples(&config.kb_path)?;
        let dict = EntityDictionary::build(&kb);
        let templates = match &config.templates_path {
            Some(p) => load_templates(p)?,
            None => Vec::new(),
        };
        let index = match &config.index_path {
            Some(p) if p.is_file() => InvertedIndex::load(p)?,
            _ => {
                let passages = match &config.passages_path {
                    Some(p) => load_passages(p)?,
                    None => Vec::new(),
                };
                build_index(corpus_documents(&kb, &passages, &dict)?)?
            }
        };
        let any_model = [
            &config.tagger_path,
            &config.scorer_path,
            &config.reader_path,
            &config.selector_path,
        ]
        .iter()
        .any(|p| p.is_some());
        let vocab = match &config.vocab_path {
            Some(p) => Vocabulary::load(p)?,
            None if any_model => return Err(PipelineError::MissingVocabulary),
            None => Vocabulary::default(),
        };
        let load =
            |p: &Option<std::path::PathBuf>| -> Result<Option<ModelParameters>, PipelineError> {
                Ok(match p {
                    Some(p) => Some(ModelParameters::load(p)?),
                    None => None,
                })
            };
        let reader = match load(&config.reader_path)? {
            Some(params) => Some(ReaderModel::new(params, vocab.clone())?),
            None => None,
        };
        let selector = load(&config.selector_path)?.map(|params| SelectorModel {
            params,
            vocab: vocab.clone(),
        });
        Ok(System {
            parts: Arc::new(Parts {
                kb,
                dict,
                templates,
                index,
                tagger: load(&config.tagger_path)?,
                scorer: load(&config.scorer_path)?,
                reader,
                selector,
                vocab,
                retrieval_k: config.retrieval_k,
            }),
            timeout: Duration::from_millis(config.solver_timeout_ms),
            parallelism: Parallelism::default(),
        })
    }

    pub fn load(config_path: &Path) -> Result<Self, PipelineError> {
        Self::from_config(&SystemConfig::load(config_path)?)
    }

    /// Copy-on-write: clones already handed out keep their own resources.
    fn parts_mut(&mut self) -> &mut Parts {
        Arc::make_mut(&mut self.parts)
    }

    /// Attach or remove the tagger and relation scorer.
    pub fn set_ld_models(
        &mut self,
        tagger: Option<ModelParameters>,
        scorer: Option<ModelParameters>,
    ) {
        let parts = self.parts_mut();
        parts.tagger = tagger;
        parts.scorer = scorer;
    }

    pub fn set_reader(&mut self, reader: Option<ReaderModel>) {
        self.parts_mut().reader = reader;
    }

    pub fn set_selector(&mut self, selector: Option<SelectorModel>) {
        self.parts_mut().selector = selector;
    }

    pub fn set_templates(&mut self, templates: Vec<QuestionTemplate>) {
        self.parts_mut().templates = templates;
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// `Sequential` runs the solvers one after another on the calling thread.
    pub fn with_parallelism(mut self, parallelism: Parallelism) -> Self {
        self.parallelism = parallelism;
        self
    }

    pub fn parallelism(&self) -> Parallelism {
        self.parallelism
    }

    pub fn kb(&self) -> &KnowledgeBase {
        &self.parts.kb
    }

    pub fn dictionary(&self) -> &EntityDictionary {
        &self.parts.dict
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.parts.index
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.parts.vocab
    }

    pub fn has_selector(&self) -> bool {
        self.parts.selector.is_some()
    }

    /// Each solver's full candidate list and runtime. A solver that fails,
    /// panics or overruns the timeout contributes an empty list.
    pub fn solve_all(
        &self,
        question: &str,
    ) -> (
        BTreeMap<Solver, Vec<AnswerCandidate>>,
        BTreeMap<Solver, f64>,
    ) {
        let mut candidates = BTreeMap::new();
        let mut timings = BTreeMap::new();
        if self.parallelism.is_parallel() {
            let started = Instant::now();
            let receivers: Vec<(Solver, mpsc::Receiver<Vec<AnswerCandidate>>)> = Solver::ALL
                .into_iter()
                .map(|solver| {
                    let (tx, rx) = mpsc::channel();
                    let parts = Arc::clone(&self.parts);
                    let q = question.to_string();
                    thread::spawn(move || {
                        let found = parts.run(solver, &q);
                        drop(parts);
                        let _ = tx.send(found);
                    });
                    (solver, rx)
                })
                .collect();
            let deadline = started + self.timeout;
            for (solver, rx) in receivers {
                let wait = deadline.saturating_duration_since(Instant::now());
                let found = match rx.recv_timeout(wait) {
                    Ok(c) => c,
                    Err(mpsc::RecvTimeoutError::Timeout) => {
                        warn!("{solver} solver timed out");
                        Vec::new()
                    }
                    Err(mpsc::RecvTimeoutError::Disconnected) => {
                        warn!("{solver} solver failed");
                        Vec::new()
                    }
                };
                timings.insert(solver, started.elapsed().as_secs_f64() * 1e3);
                candidates.insert(solver, found);
            }
        } else {
            for solver in Solver::ALL {
                let started = Instant::now();
                let found = catch_unwind(AssertUnwindSafe(|| self.parts.run(solver, question)))
                    .unwrap_or_else(|_| {
                        warn!("{solver} solver failed");
                        Vec::new()
                    });
                let elapsed = started.elapsed();
                let found = if elapsed > self.timeout {
                    warn!("{solver} solver timed out");
                    Vec::new()
                } else {
                    found
                };
                timings.insert(solver, elapsed.as_secs_f64() * 1e3);
                candidates.insert(solver, found);
            }
        }
        (candidates, timings)
    }

    pub fn ask(&self, question: &str) -> Result<AskResponse, PipelineError> {
        if normalize(question).is_empty() {
            return Err(PipelineError::EmptyQuestion);
        }
        let (candidates, timings) = self.solve_all(question);
        let tops: Vec<AnswerCandidate> = Solver::ALL
            .iter()
            .filter_map(|s| candidates.get(s).and_then(|c| c.first()).cloned())
            .collect();
        let (answer, confidence, solver) = self.choose(question, &tops);
        Ok(AskResponse {
            answer,
            confidence,
            solver,
            candidates,
            timings,
        })
    }

    /// Selector choice when a selector is loaded, else the most confident
    /// top candidate, earlier solvers winning ties.
    fn choose(
        &self,
        question: &str,
        tops: &[AnswerCandidate],
    ) -> (Option<String>, f64, Option<String>) {
        if tops.is_empty() {
            return (None, 0.0, None);
        }
        if let Some(selector) = &self.parts.selector {
            match select(selector, question, tops) {
                Ok(r) => {
                    return (
                        Some(r.answer.answer),
                        r.probabilities[r.chosen],
                        Some("selector".into()),
                    )
                }
                Err(e) => debug!("selector failed, falling back: {e}"),
            }
        }
        let mut best = &tops[0];
        for c in &tops[1..] {
            if c.confidence > best.confidence {
                best = c;
            }
        }
        (
            Some(best.answer.clone()),
            best.confidence,
            Some(best.solver.to_string()),
        )
    }
}
