//! Statistical engine: a pluggable predictor contract, the default
//! co-occurrence ranker, and knowledge-base filtering of its candidates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::Serialize;
use thiserror::Error;

use crate::kb::{simple_name_of, KnowledgeBase};
use crate::snippet::{ApiElement, AugmentedSnippet};

#[derive(Debug, Error)]
pub enum StatError {
    #[error("truth element `{0}` not found in snippet")]
    MissingElement(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Io(String),
    #[error("external predictor: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub fqn: String,
    pub score: f64,
}

/// Tokens around one target, drawn from an augmented snippet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextWindow {
    /// Non-trivia token texts within the line window, target excluded.
    pub tokens: Vec<String>,
    /// Source text of the window lines with the target masked.
    pub lines: Vec<String>,
    pub first_line: u32,
}

pub const MASK: &str = "<mask>";

impl ContextWindow {
    pub fn build(aug: &AugmentedSnippet, target: &ApiElement, eta: u32) -> Self {
        let lo = target.line.saturating_sub(eta).max(1);
        let hi = target.line.saturating_add(eta);
        let tokens = (0..aug.len())
            .filter(|&i| i != target.token_index && !aug.classes[i].is_trivia() && (lo..=hi).contains(&aug.lines[i]))
            .map(|i| aug.tokens[i].clone())
            .collect();
        let mut text = String::new();
        for (i, t) in aug.tokens.iter().enumerate() {
            text.push_str(if i == target.token_index { MASK } else { t });
        }
        let lines = text
            .split('\n')
            .enumerate()
            .filter(|(n, _)| (lo..=hi).contains(&(*n as u32 + 1)))
            .map(|(_, l)| l.to_string())
            .collect();
        ContextWindow {
            tokens,
            lines,
            first_line: lo,
        }
    }
}

/// Anything that ranks candidate types for a masked element.
pub trait Predictor {
    /// Ranked candidates, at most `k`, scores nonincreasing.
    fn predict(&self, window: &ContextWindow, target: &ApiElement, k: usize) -> Vec<ScoredCandidate>;

    /// Line radius used to build windows when the caller does not override it.
    fn window_eta(&self) -> u32;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CandidateUniverse {
    /// Known types sharing the target's simple name.
    #[default]
    SimpleName,
    /// Simple-name matches plus every type co-occurring with a window token.
    CoOccurring,
}

impl CandidateUniverse {
    fn as_str(self) -> &'static str {
        match self {
            CandidateUniverse::SimpleName => "simple-name",
            CandidateUniverse::CoOccurring => "co-occurring",
        }
    }
}

/// Smoothed token/type co-occurrence counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceModel {
    counts: BTreeMap<String, BTreeMap<String, u64>>,
    fqn_totals: BTreeMap<String, u64>,
    by_simple_name: BTreeMap<String, BTreeSet<String>>,
    pub smoothing_alpha: f64,
    pub window_eta: u32,
    pub universe: CandidateUniverse,
}

impl Default for CooccurrenceModel {
    fn default() -> Self {
        CooccurrenceModel {
            counts: BTreeMap::new(),
            fqn_totals: BTreeMap::new(),
            by_simple_name: BTreeMap::new(),
            smoothing_alpha: 1.0,
            window_eta: 2,
            universe: CandidateUniverse::default(),
        }
    }
}

/// One training snippet with its ground-truth types.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub augmented: AugmentedSnippet,
    pub elements: Vec<ApiElement>,
    pub truth: BTreeMap<ApiElement, String>,
}

impl CooccurrenceModel {
    pub fn count(&self, token: &str, fqn: &str) -> u64 {
        self.counts.get(token).and_then(|m| m.get(fqn)).copied().unwrap_or(0)
    }

    pub fn fqn_total(&self, fqn: &str) -> u64 {
        self.fqn_totals.get(fqn).copied().unwrap_or(0)
    }

    pub fn vocabulary_size(&self) -> usize {
        self.counts.len()
    }

    pub fn known_types(&self) -> impl Iterator<Item = &String> {
        self.fqn_totals.keys()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn add(&mut self, token: &str, fqn: &str, n: u64) {
        if n == 0 {
            return;
        }
        *self
            .counts
            .entry(token.to_string())
            .or_default()
            .entry(fqn.to_string())
            .or_insert(0) += n;
        *self.fqn_totals.entry(fqn.to_string()).or_insert(0) += n;
        self.by_simple_name
            .entry(simple_name_of(fqn).to_string())
            .or_default()
            .insert(fqn.to_string());
    }

    /// Checks `fqn_totals[f] == Σ_t counts[(t, f)]`.
    pub fn totals_consistent(&self) -> bool {
        let mut sums: BTreeMap<&str, u64> = BTreeMap::new();
        for row in self.counts.values() {
            for (f, n) in row {
                *sums.entry(f.as_str()).or_insert(0) += n;
            }
        }
        sums.len() == self.fqn_totals.len() && self.fqn_totals.iter().all(|(f, n)| sums.get(f.as_str()) == Some(n))
    }

    fn log_likelihood(&self, fqn: &str, window: &[String]) -> f64 {
        let alpha = self.smoothing_alpha;
        let denom = (self.fqn_total(fqn) as f64 + alpha * self.vocabulary_size() as f64).ln();
        window
            .iter()
            .map(|t| (self.count(t, fqn) as f64 + alpha).ln() - denom)
            .sum()
    }

    fn universe_for(&self, target: &ApiElement, window: &[String]) -> BTreeSet<&str> {
        let mut out: BTreeSet<&str> = self
            .by_simple_name
            .get(&target.simple_name)
            .into_iter()
            .flatten()
            .map(String::as_str)
            .collect();
        if self.universe == CandidateUniverse::CoOccurring {
            for t in window {
                if let Some(row) = self.counts.get(t) {
                    out.extend(row.keys().map(String::as_str));
                }
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "cooc-model alpha={} eta={} universe={}\n",
            self.smoothing_alpha,
            self.window_eta,
            self.universe.as_str()
        );
        for (token, row) in &self.counts {
            for (fqn, n) in row {
                let _ = writeln!(out, "count {} {} {}", escape_token(token), fqn, n);
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, StatError> {
        let mut model = CooccurrenceModel::default();
        let mut saw_header = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |message: String| StatError::Parse { line, message };
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let words: Vec<&str> = raw.split(' ').collect();
            match words[0] {
                "cooc-model" => {
                    for attr in &words[1..] {
                        let (k, v) = attr
                            .split_once('=')
                            .ok_or_else(|| err(format!("bad header attribute `{attr}`")))?;
                        match k {
                            "alpha" => {
                                model.smoothing_alpha = v
                                    .parse()
                                    .ok()
                                    .filter(|a: &f64| *a > 0.0)
                                    .ok_or_else(|| err(format!("bad alpha `{v}`")))?
                            }
                            "eta" => model.window_eta = v.parse().map_err(|_| err(format!("bad eta `{v}`")))?,
                            "universe" => {
                                model.universe = match v {
                                    "simple-name" => CandidateUniverse::SimpleName,
                                    "co-occurring" => CandidateUniverse::CoOccurring,
                                    _ => return Err(err(format!("bad universe `{v}`"))),
                                }
                            }
                            _ => return Err(err(format!("unknown header attribute `{k}`"))),
                        }
                    }
                    saw_header = true;
                }
                "count" if words.len() == 4 => {
                    let n: u64 = words[3].parse().map_err(|_| err(format!("bad count `{}`", words[3])))?;
                    let token = unescape_token(words[1]).ok_or_else(|| err("bad token escape".into()))?;
                    model.add(&token, words[2], n);
                }
                _ => return Err(err(format!("unrecognised record `{raw}`"))),
            }
        }
        if !saw_header && !text.trim().is_empty() {
            return Err(StatError::Parse {
                line: 1,
                message: "missing cooc-model header".into(),
            });
        }
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StatError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| StatError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

impl Predictor for CooccurrenceModel {
    fn predict(&self, window: &ContextWindow, target: &ApiElement, k: usize) -> Vec<ScoredCandidate> {
        let mut scored: Vec<ScoredCandidate> = self
            .universe_for(target, &window.tokens)
            .into_iter()
            .map(|f| ScoredCandidate {
                fqn: f.to_string(),
                score: self.log_likelihood(f, &window.tokens),
            })
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.fqn.cmp(&b.fqn)));
        scored.truncate(k);
        scored
    }

    fn window_eta(&self) -> u32 {
        self.window_eta
    }
}

fn escape_token(token: &str) -> String {
    let mut out = String::with_capacity(token.len());
    for c in token.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            ' ' => out.push_str("\\s"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_token(raw: &str) -> Option<String> {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            out.push(match chars.next()? {
                '\\' => '\\',
                's' => ' ',
                't' => '\t',
                'n' => '\n',
                'r' => '\r',
                _ => return None,
            });
        } else {
            out.push(c);
        }
    }
    Some(out)
}

/// Counts, for every truth pair, each context token within `eta` lines of
/// the element. Other truth elements in the window contribute both their
/// written name and their true type, so the model learns from plain and
/// augmented contexts alike.
pub fn train(corpus: &[TrainingExample], eta: u32) -> CooccurrenceModel {
    let mut model = CooccurrenceModel {
        window_eta: eta,
        ..Default::default()
    };
    for ex in corpus {
        for (target, fqn) in &ex.truth {
            let window = ContextWindow::build(&ex.augmented, target, eta);
            for t in &window.tokens {
                model.add(t, fqn, 1);
            }
            let lo = target.line.saturating_sub(eta);
            let hi = target.line.saturating_add(eta);
            for (other, other_fqn) in &ex.truth {
                if other != target && (lo..=hi).contains(&other.line) {
                    model.add(other_fqn, fqn, 1);
                }
            }
        }
    }
    model
}

/// Co-occurrence prediction for one element of an augmented snippet.
pub fn predict_topk(
    model: &CooccurrenceModel,
    aug: &AugmentedSnippet,
    target: &ApiElement,
    k: usize,
) -> Vec<ScoredCandidate> {
    let window = ContextWindow::build(aug, target, model.window_eta);
    model.predict(&window, target, k)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CandidateList {
    pub ranked: Vec<String>,
    pub k: usize,
}

impl CandidateList {
    pub fn top(&self) -> Option<&str> {
        self.ranked.first().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }
}

/// Drops candidates the knowledge base does not know, then truncates to k.
pub fn filter_against_kb(ranked: &[ScoredCandidate], kb: &KnowledgeBase, k: usize) -> CandidateList {
    let mut seen = BTreeSet::new();
    let ranked = ranked
        .iter()
        .filter(|c| kb.contains(&c.fqn) && seen.insert(c.fqn.as_str()))
        .take(k)
        .map(|c| c.fqn.clone())
        .collect();
    CandidateList { ranked, k }
}

/// Predicts every element in order. Unfiltered predictions are requested
/// with the same k; filtering only ever shortens the list.
pub fn predict_all(
    predictor: &dyn Predictor,
    aug: &AugmentedSnippet,
    elements: &[ApiElement],
    kb: &KnowledgeBase,
    k: usize,
    eta: Option<u32>,
) -> BTreeMap<ApiElement, CandidateList> {
    let eta = eta.unwrap_or_else(|| predictor.window_eta());
    elements
        .iter()
        .map(|e| {
            let window = ContextWindow::build(aug, e, eta);
            let ranked = predictor.predict(&window, e, k);
            (e.clone(), filter_against_kb(&ranked, kb, k))
        })
        .collect()
}

#[derive(Serialize)]
struct PredictRequest<'a> {
    context_lines: &'a [String],
    target_key: String,
    k: usize,
}

/// A predictor served by a child process over newline-delimited JSON.
///
/// Each request is one line, `{"context_lines":[...],"target_key":"Name[l,o]","k":N}`,
/// where the target's token in `context_lines` is replaced by `<mask>`. The
/// child answers with one line holding a JSON array of candidate strings,
/// best first.
pub struct ExternalPredictor {
    io: Mutex<(Child, ChildStdin, BufReader<ChildStdout>)>,
    eta: u32,
}

impl ExternalPredictor {
    /// Spawns `command` through `sh -c`.
    pub fn spawn(command: &str, eta: u32) -> Result<Self, StatError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| StatError::Io(format!("spawning `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = BufReader::new(child.stdout.take().expect("piped"));
        Ok(ExternalPredictor {
            io: Mutex::new((child, stdin, stdout)),
            eta,
        })
    }

    pub fn request(&self, window: &ContextWindow, target: &ApiElement, k: usize) -> Result<Vec<String>, StatError> {
        let req = PredictRequest {
            context_lines: &window.lines,
            target_key: target.key(),
            k,
        };
        let line = serde_json::to_string(&req).map_err(|e| StatError::Protocol(e.to_string()))?;
        let mut guard = self.io.lock().map_err(|_| StatError::Protocol("poisoned".into()))?;
        let (_, stdin, stdout) = &mut *guard;
        writeln!(stdin, "{line}").map_err(|e| StatError::Protocol(e.to_string()))?;
        stdin.flush().map_err(|e| StatError::Protocol(e.to_string()))?;
        let mut response = String::new();
        let n = stdout
            .read_line(&mut response)
            .map_err(|e| StatError::Protocol(e.to_string()))?;
        if n == 0 {
            return Err(StatError::Protocol("predictor closed its output".into()));
        }
        let mut list: Vec<String> =
            serde_json::from_str(response.trim()).map_err(|e| StatError::Protocol(format!("bad response: {e}")))?;
        list.truncate(k);
        Ok(list)
    }
}

impl Predictor for ExternalPredictor {
    fn predict(&self, window: &ContextWindow, target: &ApiElement, k: usize) -> Vec<ScoredCandidate> {
        match self.request(window, target, k) {
            Ok(list) => list
                .into_iter()
                .enumerate()
                .map(|(rank, fqn)| ScoredCandidate {
                    fqn,
                    score: -(rank as f64),
                })
                .collect(),
            Err(e) => {
                eprintln!("warning: {e}");
                Vec::new()
            }
        }
    }

    fn window_eta(&self) -> u32 {
        self.eta
    }
}

impl Drop for ExternalPredictor {
    fn drop(&mut self) {
        if let Ok(guard) = self.io.get_mut() {
            let _ = guard.0.kill();
            let _ = guard.0.wait();
        }
    }
}
