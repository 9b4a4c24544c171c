//! Precision/recall scoring against ground truth.
//!
//! precision = correct / inferred, recall = correct / requested, averaged
//! per snippet (unweighted). Snippets with nothing inferred have no
//! precision; they are left out of precision means and count as zero
//! recall.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::snippet::parse_element_key;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("answer for `{0}` has no ground truth")]
    UnknownElement(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("snippet `{0}` has no library label")]
    MissingLibrary(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub snippet_id: String,
    pub library: String,
    /// Element key (`Name[line,occ]`) → expected type.
    pub truth: BTreeMap<String, String>,
}

/// Parses a truth sidecar: `Name[line,occ]<TAB>fqn` lines, `#` comments,
/// and an optional `#library=<id>` directive.
pub fn parse_truth(text: &str) -> Result<(Option<String>, BTreeMap<String, String>), EvalError> {
    let mut library = None;
    let mut truth = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some(lib) = rest.trim().strip_prefix("library=") {
                library = Some(lib.trim().to_string());
            }
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        let (key, fqn) = trimmed
            .split_once('\t')
            .or_else(|| trimmed.split_once(char::is_whitespace))
            .ok_or_else(|| EvalError::Parse {
                line,
                message: format!("expected `Name[line,occ]<TAB>fqn`, got `{trimmed}`"),
            })?;
        let key = key.trim();
        if parse_element_key(key).is_none() {
            return Err(EvalError::Parse {
                line,
                message: format!("malformed element key `{key}`"),
            });
        }
        truth.insert(key.to_string(), fqn.trim().to_string());
    }
    Ok((library, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SnippetScore {
    pub inferred: usize,
    pub correct: usize,
    pub requested: usize,
}

impl SnippetScore {
    pub fn precision(&self) -> Option<f64> {
        (self.inferred > 0).then(|| self.correct as f64 / self.inferred as f64)
    }

    pub fn recall(&self) -> f64 {
        if self.requested == 0 {
            0.0
        } else {
            self.correct as f64 / self.requested as f64
        }
    }

    /// Exact comparison of correct/inferred against `num/den`.
    pub fn precision_is(&self, num: usize, den: usize) -> bool {
        self.inferred > 0 && self.correct * den == num * self.inferred
    }

    pub fn recall_is(&self, num: usize, den: usize) -> bool {
        self.requested > 0 && self.correct * den == num * self.requested
    }
}

/// Scores one snippet's answers (element key → type).
pub fn score_snippet(
    answers: &BTreeMap<String, String>,
    truth: &GroundTruth,
    lenient: bool,
) -> Result<SnippetScore, EvalError> {
    let mut inferred = 0;
    let mut correct = 0;
    for (key, fqn) in answers {
        match truth.truth.get(key) {
            Some(expected) => {
                inferred += 1;
                if expected == fqn {
                    correct += 1;
                }
            }
            None if lenient => {}
            None => return Err(EvalError::UnknownElement(key.clone())),
        }
    }
    Ok(SnippetScore {
        inferred,
        correct,
        requested: truth.truth.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Averages {
    /// `None` when no snippet in the group inferred anything.
    pub precision: Option<f64>,
    pub recall: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_snippet: BTreeMap<String, SnippetScore>,
    pub per_library: BTreeMap<String, Averages>,
    pub overall: Averages,
}

fn averages<'a>(scores: impl Iterator<Item = &'a SnippetScore>) -> Averages {
    let mut p_sum = 0.0;
    let mut p_n = 0usize;
    let mut r_sum = 0.0;
    let mut n = 0usize;
    for s in scores {
        if let Some(p) = s.precision() {
            p_sum += p;
            p_n += 1;
        }
        r_sum += s.recall();
        n += 1;
    }
    Averages {
        precision: (p_n > 0).then(|| p_sum / p_n as f64),
        recall: if n == 0 { 0.0 } else { r_sum / n as f64 },
        n,
    }
}

pub fn aggregate(
    reports: &BTreeMap<String, SnippetScore>,
    libraries: &BTreeMap<String, String>,
) -> Result<EvalReport, EvalError> {
    let mut groups: BTreeMap<String, Vec<&SnippetScore>> = BTreeMap::new();
    for (id, score) in reports {
        let lib = libraries.get(id).ok_or_else(|| EvalError::MissingLibrary(id.clone()))?;
        groups.entry(lib.clone()).or_default().push(score);
    }
    Ok(EvalReport {
        per_snippet: reports.clone(),
        per_library: groups
            .into_iter()
            .map(|(lib, scores)| (lib, averages(scores.into_iter())))
            .collect(),
        overall: averages(reports.values()),
    })
}

fn fmt_opt(p: Option<f64>) -> String {
    p.map(|p| format!("{p:.4}")).unwrap_or_else(|| "n/a".into())
}

impl EvalReport {
    /// Fixed-column table: one row per library, then the overall row.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str("# precision averages exclude snippets with no inferred types; their recall counts as 0\n");
        let _ = writeln!(out, "{:<16} {:>10} {:>10} {:>6}", "library", "precision", "recall", "n");
        for (lib, a) in &self.per_library {
            let _ = writeln!(
                out,
                "{:<16} {:>10} {:>10.4} {:>6}",
                lib,
                fmt_opt(a.precision),
                a.recall,
                a.n
            );
        }
        let o = &self.overall;
        let _ = writeln!(
            out,
            "{:<16} {:>10} {:>10.4} {:>6}",
            "overall",
            fmt_opt(o.precision),
            o.recall,
            o.n
        );
        out
    }

    /// One JSON record per snippet, per library, and overall.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct SnippetRow<'a> {
            kind: &'static str,
            id: &'a str,
            precision: Option<f64>,
            recall: f64,
            inferred: usize,
            correct: usize,
            requested: usize,
        }
        #[derive(Serialize)]
        struct GroupRow<'a> {
            kind: &'static str,
            id: &'a str,
            precision: Option<f64>,
            recall: f64,
            n: usize,
        }
        let mut out = String::new();
        for (id, s) in &self.per_snippet {
            let row = SnippetRow {
                kind: "snippet",
                id,
                precision: s.precision(),
                recall: s.recall(),
                inferred: s.inferred,
                correct: s.correct,
                requested: s.requested,
            };
            out.push_str(&serde_json::to_string(&row).expect("serializable"));
            out.push('\n');
        }
        let group = |kind, id: &str, a: &Averages| {
            serde_json::to_string(&GroupRow {
                kind,
                id,
                precision: a.precision,
                recall: a.recall,
                n: a.n,
            })
            .expect("serializable")
        };
        for (lib, a) in &self.per_library {
            out.push_str(&group("library", lib, a));
            out.push('\n');
        }
        out.push_str(&group("overall", "overall", &self.overall));
        out.push('\n');
        out
    }
}
