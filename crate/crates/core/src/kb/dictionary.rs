// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use super::KnowledgeBase;
use crate::text::{normalize, tokenize};

/// Normalized surface form → canonical KB entity.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityDictionary {
    entries: BTreeMap<String, String>,
    max_entry_tokens: usize,
}

impl EntityDictionary {
    /// One entry per KB entity. When two entities normalize to the same key,
    /// the lexicographically smallest canonical string is kept.
    pub fn build(kb: &KnowledgeBase) -> Self {
        let mut entries: BTreeMap<String, String> = BTreeMap::new();
        for entity in kb.entities() {
            let key = normalize(entity);
            if key.is_empty() {
                continue;
            }
            // entities() iterates in sorted order, so the first writer is the smallest
            entries.entry(key).or_insert_with(|| entity.clone());
        }
        let max_entry_tokens = entries
            .keys()
            .map(|k| tokenize(k, None).len())
            .max()
            .unwrap_or(0);
        EntityDictionary {
            entries,
            max_entry_tokens,
        }
    }

    pub fn get(&self, normalized: &str) -> Option<&str> {
        self.entries.get(normalized).map(String::as_str)
    }

    pub fn contains_key(&self, normalized: &str) -> bool {
        self.entries.contains_key(normalized)
    }

    /// Longest entry, in tokens.
    pub fn max_entry_tokens(&self) -> usize {
        self.max_entry_tokens
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}
