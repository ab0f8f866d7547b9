// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::nn::Hyper;

pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";
pub const DEFAULT_TIMEOUT_MS: u64 = 5000;

/// System configuration, read from a JSON file. Relative paths resolve
/// against the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub kb_path: PathBuf,
    #[serde(default)]
    pub passages_path: Option<PathBuf>,
    #[serde(default)]
    pub templates_path: Option<PathBuf>,
    #[serde(default)]
    pub vocab_path: Option<PathBuf>,
    /// Prebuilt index; built from the KB and passages when absent.
    #[serde(default)]
    pub index_path: Option<PathBuf>,
    #[serde(default)]
    pub tagger_path: Option<PathBuf>,
    #[serde(default)]
    pub scorer_path: Option<PathBuf>,
    #[serde(default)]
    pub reader_path: Option<PathBuf>,
    #[serde(default)]
    pub selector_path: Option<PathBuf>,
    #[serde(default = "default_k")]
    pub retrieval_k: usize,
    #[serde(default)]
    pub hyper: Hyper,
    #[serde(default = "default_addr")]
    pub addr: String,
    #[serde(default = "default_timeout")]
    pub solver_timeout_ms: u64,
}

fn default_k() -> usize {
    crate::retrieval::DEFAULT_TOP_K
}

fn default_addr() -> String {
    DEFAULT_ADDR.to_string()
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

impl SystemConfig {
    pub fn new(kb_path: impl Into<PathBuf>) -> Self {
        SystemConfig {
            kb_path: kb_path.into(),
            passages_path: None,
            templates_path: None,
            vocab_path: None,
            index_path: None,
            tagger_path: None,
            scorer_path: None,
            reader_path: None,
            selector_path: None,
            retrieval_k: default_k(),
            hyper: Hyper::default(),
            addr: default_addr(),
            solver_timeout_ms: default_timeout(),
        }
    }

    /// Parse, resolve paths and validate.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let config = Self::read(path)?;
        config.validate()?;
        Ok(config)
    }

    /// Parse and resolve paths without checking that the files exist, for
    /// commands that produce some of them.
    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut config: SystemConfig = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base);
        Ok(config)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.kb_path);
        for p in [
            &mut self.passages_path,
            &mut self.templates_path,
            &mut self.vocab_path,
            &mut self.index_path,
            &mut self.tagger_path,
            &mut self.scorer_path,
            &mut self.reader_path,
            &mut self.selector_path,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// `retrieval_k ≥ 1` and every referenced input file exists. The index
    /// file may be missing; it is then built and not written.
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.retrieval_k == 0 {
            return Err(PipelineError::Config(
                "retrieval_k must be at least 1".into(),
            ));
        }
        let required = [
            ("kb", Some(&self.kb_path)),
            ("passages", self.passages_path.as_ref()),
            ("templates", self.templates_path.as_ref()),
            ("vocab", self.vocab_path.as_ref()),
            ("tagger", self.tagger_path.as_ref()),
            ("scorer", self.scorer_path.as_ref()),
            ("reader", self.reader_path.as_ref()),
            ("selector", self.selector_path.as_ref()),
        ];
        for (what, path) in required {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(PipelineError::MissingFile {
                        what,
                        path: p.display().to_string(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_resolution() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("kb.tsv"), "a\tb\tc\n").unwrap();
        let cfg = dir.path().join("config.json");
        fs::write(&cfg, r#"{"kb_path": "kb.tsv", "hyper": {"epochs": 3}}"#).unwrap();
        let c = SystemConfig::load(&cfg).unwrap();
        assert_eq!(c.kb_path, dir.path().join("kb.tsv"));
        assert_eq!(c.retrieval_k, 10);
        assert_eq!(c.hyper.epochs, 3);
        assert_eq!(c.hyper.dim, 32);
        assert_eq!(c.solver_timeout_ms, 5000);
    }

    #[test]
    fn validation() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("kb.tsv"), "a\tb\tc\n").unwrap();
        let cfg = dir.path().join("config.json");
        fs::write(&cfg, r#"{"kb_path": "kb.tsv", "reader_path": "nope.json"}"#).unwrap();
        assert!(matches!(
            SystemConfig::load(&cfg),
            Err(PipelineError::MissingFile { what: "reader", .. })
        ));
        let read = SystemConfig::read(&cfg).unwrap();
        assert_eq!(read.reader_path, Some(dir.path().join("nope.json")));
        fs::write(&cfg, r#"{"kb_path": "kb.tsv", "retrieval_k": 0}"#).unwrap();
        assert!(matches!(
            SystemConfig::load(&cfg),
            Err(PipelineError::Config(_))
        ));
        fs::write(&cfg, r#"{"kb_path": "kb.tsv", "bogus": 1}"#).unwrap();
        assert!(matches!(
            SystemConfig::load(&cfg),
            Err(PipelineError::Config(_))
        ));
    }
}
