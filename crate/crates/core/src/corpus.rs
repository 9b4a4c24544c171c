//! Snippet corpora on disk: `<id>.java` files with `<id>.truth` sidecars.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::eval::{parse_truth, EvalError, GroundTruth};
use crate::kb::KnowledgeBase;
use crate::snippet::{identify_api_elements, tokenize, AugmentedSnippet, IdentifyOptions, Snippet};
use crate::stat::{StatError, TrainingExample};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("missing truth sidecar {0}")]
    MissingTruth(PathBuf),
    #[error("{path}: {source}")]
    Truth {
        path: PathBuf,
        #[source]
        source: EvalError,
    },
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub id: String,
    pub snippet: Snippet,
    pub truth: GroundTruth,
}

fn read(path: &Path) -> Result<String, CorpusError> {
    std::fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Most common library among the truth types the knowledge base knows.
fn majority_library(truth: &BTreeMap<String, String>, kb: &KnowledgeBase) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for fqn in truth.values() {
        if let Some(e) = kb.get(fqn) {
            *counts.entry(e.library.as_str()).or_insert(0) += 1;
        }
    }
    let best = counts.values().copied().max()?;
    counts
        .into_iter()
        .find(|(_, n)| *n == best)
        .map(|(lib, _)| lib.to_string())
}

/// Loads every `*.java` file in `dir`, sorted by id.
pub fn load_corpus(dir: impl AsRef<Path>, kb: &KnowledgeBase) -> Result<Vec<CorpusEntry>, CorpusError> {
    let dir = dir.as_ref();
    let listing = std::fs::read_dir(dir).map_err(|e| CorpusError::Io {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut paths: Vec<PathBuf> = listing
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "java"))
        .collect();
    paths.sort();

    let mut out = Vec::new();
    for path in paths {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let truth_path = path.with_extension("truth");
        if !truth_path.exists() {
            return Err(CorpusError::MissingTruth(truth_path));
        }
        let (library, truth) = parse_truth(&read(&truth_path)?).map_err(|source| CorpusError::Truth {
            path: truth_path.clone(),
            source,
        })?;
        let library = library
            .or_else(|| majority_library(&truth, kb))
            .unwrap_or_else(|| "unknown".to_string());
        out.push(CorpusEntry {
            snippet: tokenize(&read(&path)?),
            truth: GroundTruth {
                snippet_id: id.clone(),
                library,
                truth,
            },
            id,
        });
    }
    Ok(out)
}

/// Resolves truth keys against identified elements for model training.
pub fn training_examples(
    entries: &[CorpusEntry],
    kb: Option<&KnowledgeBase>,
    options: &IdentifyOptions,
) -> Result<Vec<TrainingExample>, StatError> {
    entries
        .iter()
        .map(|entry| {
            let elements = identify_api_elements(&entry.snippet, kb, options);
            let mut truth = BTreeMap::new();
            for (key, fqn) in &entry.truth.truth {
                let element = elements
                    .iter()
                    .find(|e| &e.key() == key)
                    .ok_or_else(|| StatError::MissingElement(format!("{}: {key}", entry.id)))?;
                truth.insert(element.clone(), fqn.clone());
            }
            Ok(TrainingExample {
                augmented: AugmentedSnippet::unaugmented(&entry.snippet),
                elements,
                truth,
            })
        })
        .collect()
}
