// SPDX-License-Identifier: Apache-2.0

//! Hybrid open-domain question answering.
//!
//! Three solvers answer every question independently:
//!
//! * [`sp_solver`]: dictionary and template matching produce SPARQL queries
//!   that run against the [`kb`] triple store.
//! * [`ld_solver`]: a BiLSTM tagger finds the entity mention, edit distance
//!   links it, and an attentive CNN/BiGRU scorer picks the relation.
//! * retrieve-and-read: [`retrieval`] ranks passages with BM25 and the
//!   [`reader`] extracts a span from the best ones.
//!
//! The [`selector`] scores every question/answer pair with a transformer
//! encoder and returns the most probable answer. [`pipeline`] wires the pieces
//! together behind a CLI and an HTTP endpoint.
//!
//! The neural components share the hand-written forward and backward kernels
//! in [`nn`].

pub mod jsonl;
pub mod kb;
pub mod ld_solver;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod reader;
pub mod retrieval;
pub mod selector;
pub mod sp_solver;
pub mod text;

pub use kb::{KnowledgeBase, Triple};
pub use pipeline::{AskResponse, EvalReport, System, SystemConfig};
pub use sp_solver::{AnswerCandidate, Solver};
