// SPDX-License-Identifier: Apache-2.0

//! In-memory triple store, single-pattern SPARQL subset and the entity
//! dictionary shared by both KBQA solvers.

mod dictionary;
mod sparql;
mod store;

pub use dictionary::EntityDictionary;
pub use sparql::{
    execute_sparql, generate_sparql, parse_sparql, Comparator, Filter, SparqlQuery, TriplePattern,
};
pub use store::{load_triples, KnowledgeBase, Triple};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("line {0}: expected `subject<TAB>predicate<TAB>object`")]
    MalformedLine(usize),
    #[error("invalid triple: {0}")]
    InvalidTriple(String),
    #[error("syntax error at byte {position}: expected {expected}")]
    SyntaxError { position: usize, expected: String },
    #[error("numeric filter applied to non-numeric value `{0}`")]
    FilterTypeError(String),
    #[error("empty query component")]
    EmptyComponent,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
