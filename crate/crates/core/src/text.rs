// SPDX-License-Identifier: Apache-2.0

//! Normalization, tokenization, edit distance and vocabulary encoding.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

use crate::kb::EntityDictionary;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;

const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Stand-in token for the linked entity mention in relation patterns.
pub const ENTITY_PLACEHOLDER: &str = "<e>";

const TERMINAL_PUNCTUATION: &[char] = &['.', '?', '!', ',', ';', ':'];

/// Lowercase, trim, collapse internal whitespace and drop terminal punctuation.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&word.to_lowercase());
    }
    loop {
        let trimmed = out.trim_end_matches(TERMINAL_PUNCTUATION).trim_end();
        if trimmed.len() == out.len() {
            break;
        }
        out.truncate(trimmed.len());
    }
    out
}

/// Tokens plus their byte spans in the source text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub spans: Vec<(usize, usize)>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn is_connector(c: char) -> bool {
    matches!(c, '-' | '\'' | '.')
}

/// Word boundaries: runs of alphanumerics, with `-`, `'` and `.` kept only
/// when flanked by alphanumerics on both sides ("a.b", "3.5", "o'neil").
fn base_spans(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (k, &(pos, c)) in chars.iter().enumerate() {
        let word = c.is_alphanumeric()
            || (is_connector(c)
                && start.is_some()
                && chars.get(k + 1).is_some_and(|&(_, n)| n.is_alphanumeric()));
        match (word, start) {
            (true, None) => start = Some(pos),
            (false, Some(s)) => {
                spans.push((s, pos));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Split on whitespace and punctuation; with a dictionary, merge the longest
/// run of tokens (left to right) whose normalized source text is an entry.
pub fn tokenize(text: &str, dict: Option<&EntityDictionary>) -> TokenSequence {
    let base = base_spans(text);
    let max_window = dict.map_or(0, |d| d.max_entry_tokens());
    let mut seq = TokenSequence::default();
    let mut i = 0;
    while i < base.len() {
        let mut taken = 1;
        if let Some(dict) = dict {
            let widest = max_window.min(base.len() - i);
            for width in (2..=widest).rev() {
                let span = (base[i].0, base[i + width - 1].1);
                if dict.contains_key(&normalize(&text[span.0..span.1])) {
                    taken = width;
                    break;
                }
            }
        }
        let span = (base[i].0, base[i + taken - 1].1);
        seq.tokens.push(normalize(&text[span.0..span.1]));
        seq.spans.push(span);
        i += taken;
    }
    seq
}

/// Character-level edit distance (insert, delete, substitute).
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitute = prev[j] + usize::from(ca != cb);
            cur[j + 1] = substitute.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Dense token ↔ id mapping. Ids 0..4 are `[PAD] [UNK] [CLS] [SEP]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(std::iter::empty::<String>())
    }
}

impl Vocabulary {
    /// Reserved tokens first, then each distinct token in first-seen order.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for t in RESERVED {
            vocab.insert(t);
        }
        for t in tokens {
            vocab.insert(t.as_ref());
        }
        vocab
    }

    fn insert(&mut self, token: &str) {
        if token.is_empty() || self.token_to_id.contains_key(token) {
            return;
        }
        self.token_to_id
            .insert(token.to_string(), self.id_to_token.len());
        self.id_to_token.push(token.to_string());
    }

    /// One token per line; line `n` (0-based) gets id `n + 4`.
    pub fn load(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(Self::from_tokens(text.lines().map(str::trim_end)))
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut out = String::new();
        for t in &self.id_to_token[RESERVED.len()..] {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        // the reserved tokens are always present
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Like [`encode`](Self::encode), but ids at or above `bound` (an
    /// embedding table trained on a smaller vocabulary) become UNK.
    pub fn encode_bounded<S: AsRef<str>>(&self, tokens: &[S], bound: usize) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| match self.id(t.as_ref()) {
                id if id < bound => id,
                _ => UNK,
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(RESERVED[UNK]).to_string())
            .collect()
    }
}

/// Free-function form of [`Vocabulary::encode`].
pub fn encode<S: AsRef<str>>(vocab: &Vocabulary, tokens: &[S]) -> Vec<usize> {
    vocab.encode(tokens)
}
