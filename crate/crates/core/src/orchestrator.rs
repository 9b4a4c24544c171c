//! The iterative loop: constraint solving, context augmentation, statistical
//! prediction and knowledge-base reduction, followed by result combination.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::constraint::{self, ConstraintResult, ExtractOptions};
use crate::kb::{collect_candidate_types, reduce_kb, KbError, KnowledgeBase};
use crate::snippet::{
    augment, identify_api_elements, ApiElement, AugmentError, AugmentedSnippet, IdentifyOptions, Snippet,
};
use crate::stat::{predict_all, CandidateList, Predictor};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineOrder {
    #[default]
    ConstraintFirst,
    StatFirst,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub k: usize,
    pub delta: usize,
    pub order: EngineOrder,
    pub extract_options: ExtractOptions,
    pub identify_options: IdentifyOptions,
    /// Overrides the predictor's own window radius.
    pub eta: Option<u32>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k: 3,
            delta: 10,
            order: EngineOrder::ConstraintFirst,
            extract_options: ExtractOptions {
                cascaded_calls: false,
                ..ExtractOptions::default()
            },
            identify_options: IdentifyOptions::default(),
            eta: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        if self.k < 1 {
            return Err(RunError::Config("k must be at least 1".into()));
        }
        if self.delta < 1 {
            return Err(RunError::Config("delta must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub constraint_result: ConstraintResult,
    pub stat_result: BTreeMap<ApiElement, CandidateList>,
    /// Size of the knowledge base the constraint engine solved against.
    pub reduced_kb_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Constraint,
    Statistical,
    None,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Constraint => "constraint",
            Source::Statistical => "statistical",
            Source::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementOutcome {
    pub final_fqn: Option<String>,
    pub source: Source,
    pub comb_type_c: Option<String>,
    pub comb_types_s: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CombinedResult {
    pub per_element: BTreeMap<ApiElement, ElementOutcome>,
}

impl CombinedResult {
    /// Element key → final type, for scoring.
    pub fn answers(&self) -> BTreeMap<String, String> {
        self.per_element
            .iter()
            .filter_map(|(e, o)| o.final_fqn.as_ref().map(|f| (e.key(), f.clone())))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub elements: Vec<ApiElement>,
    pub combined: CombinedResult,
    pub trace: Vec<RoundRecord>,
}

pub fn check_stable(prev: &RoundRecord, cur: &RoundRecord) -> bool {
    prev.constraint_result.typed == cur.constraint_result.typed
        && prev.constraint_result.untyped == cur.constraint_result.untyped
        && prev.stat_result == cur.stat_result
}

/// Last successful answer of each engine per element.
pub fn combine_per_method(trace: &[RoundRecord]) -> (BTreeMap<ApiElement, String>, BTreeMap<ApiElement, Vec<String>>) {
    let mut comb_c = BTreeMap::new();
    let mut comb_s = BTreeMap::new();
    for record in trace {
        for (e, t) in &record.constraint_result.typed {
            comb_c.insert(e.clone(), t.clone());
        }
        for (e, list) in &record.stat_result {
            if !list.is_empty() {
                comb_s.insert(e.clone(), list.ranked.clone());
            }
        }
    }
    (comb_c, comb_s)
}

/// The constraint answer wins when present; otherwise the statistical top-1.
pub fn combine_across(
    comb_c: &BTreeMap<ApiElement, String>,
    comb_s: &BTreeMap<ApiElement, Vec<String>>,
    elements: &[ApiElement],
) -> CombinedResult {
    let per_element = elements
        .iter()
        .map(|e| {
            let c = comb_c.get(e).cloned();
            let s = comb_s.get(e).cloned().unwrap_or_default();
            let outcome = match (&c, s.first()) {
                (Some(t), _) => ElementOutcome {
                    final_fqn: Some(t.clone()),
                    source: Source::Constraint,
                    comb_type_c: c.clone(),
                    comb_types_s: s.clone(),
                },
                (None, Some(top)) => ElementOutcome {
                    final_fqn: Some(top.clone()),
                    source: Source::Statistical,
                    comb_type_c: None,
                    comb_types_s: s.clone(),
                },
                (None, None) => ElementOutcome {
                    final_fqn: None,
                    source: Source::None,
                    comb_type_c: None,
                    comb_types_s: Vec::new(),
                },
            };
            (e.clone(), outcome)
        })
        .collect();
    CombinedResult { per_element }
}

fn reduced_for_next_round(
    kb: &KnowledgeBase,
    elements: &[ApiElement],
    constraint_typed: &BTreeMap<ApiElement, String>,
    stat: &BTreeMap<ApiElement, CandidateList>,
) -> Result<KnowledgeBase, KbError> {
    let lists: BTreeMap<ApiElement, Vec<String>> = stat.iter().map(|(e, l)| (e.clone(), l.ranked.clone())).collect();
    let cantypes = collect_candidate_types(&lists, constraint_typed, elements);
    reduce_kb(kb, &cantypes)
}

struct Engines<'a> {
    snippet: &'a Snippet,
    kb: &'a KnowledgeBase,
    predictor: &'a dyn Predictor,
    config: &'a RunConfig,
    elements: Vec<ApiElement>,
}

impl Engines<'_> {
    fn constraint(&self, kb: &KnowledgeBase) -> ConstraintResult {
        constraint::infer(kb, self.snippet, &self.elements, &self.config.extract_options)
    }

    fn stat(&self, aug: &AugmentedSnippet) -> BTreeMap<ApiElement, CandidateList> {
        predict_all(
            self.predictor,
            aug,
            &self.elements,
            self.kb,
            self.config.k,
            self.config.eta,
        )
    }
}

/// Runs the loop until both engines repeat themselves or `delta` rounds
/// have executed. Each reduction starts from the original knowledge base.
pub fn run(
    snippet: &Snippet,
    kb: &KnowledgeBase,
    predictor: &dyn Predictor,
    config: &RunConfig,
) -> Result<RunOutput, RunError> {
    config.validate()?;
    let elements = identify_api_elements(snippet, Some(kb), &config.identify_options);
    let engines = Engines {
        snippet,
        kb,
        predictor,
        config,
        elements,
    };
    let elements = &engines.elements;

    let mut trace: Vec<RoundRecord> = Vec::new();
    let mut next_kb: Option<KnowledgeBase> = None;

    for round in 1..=config.delta {
        let record = match config.order {
            EngineOrder::ConstraintFirst => {
                let round_kb = next_kb.take();
                let solve_kb = round_kb.as_ref().unwrap_or(kb);
                let cres = engines.constraint(solve_kb);
                let aug = augment(snippet, elements, &cres.typed)?;
                let stat = engines.stat(&aug);
                RoundRecord {
                    round,
                    reduced_kb_size: solve_kb.len(),
                    constraint_result: cres,
                    stat_result: stat,
                }
            }
            EngineOrder::StatFirst => {
                let prev_typed = trace
                    .last()
                    .map(|r| r.constraint_result.typed.clone())
                    .unwrap_or_default();
                let aug = augment(snippet, elements, &prev_typed)?;
                let stat = engines.stat(&aug);
                let reduced = reduced_for_next_round(kb, elements, &prev_typed, &stat)?;
                let cres = engines.constraint(&reduced);
                RoundRecord {
                    round,
                    reduced_kb_size: reduced.len(),
                    constraint_result: cres,
                    stat_result: stat,
                }
            }
        };
        let stable = trace.last().is_some_and(|prev| check_stable(prev, &record));
        trace.push(record);
        if stable || round == config.delta {
            break;
        }
        if config.order == EngineOrder::ConstraintFirst {
            let last = trace.last().expect("pushed");
            next_kb = Some(reduced_for_next_round(
                kb,
                elements,
                &last.constraint_result.typed,
                &last.stat_result,
            )?);
        }
    }

    let (comb_c, comb_s) = combine_per_method(&trace);
    let combined = combine_across(&comb_c, &comb_s, elements);
    Ok(RunOutput {
        elements: engines.elements.clone(),
        combined,
        trace,
    })
}

/// Which answers to report: the combined loop or one engine alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Engine {
    #[default]
    Combined,
    ConstraintOnly,
    StatOnly,
}

/// A single constraint pass over the full knowledge base.
pub fn constraint_only(snippet: &Snippet, kb: &KnowledgeBase, config: &RunConfig) -> CombinedResult {
    let elements = identify_api_elements(snippet, Some(kb), &config.identify_options);
    let cres = constraint::infer(kb, snippet, &elements, &config.extract_options);
    combine_across(&cres.typed, &BTreeMap::new(), &elements)
}

/// A single statistical pass over the unaugmented snippet, top-1 answers.
pub fn stat_only(
    snippet: &Snippet,
    kb: &KnowledgeBase,
    predictor: &dyn Predictor,
    config: &RunConfig,
) -> CombinedResult {
    let elements = identify_api_elements(snippet, Some(kb), &config.identify_options);
    let aug = AugmentedSnippet::unaugmented(snippet);
    let lists: BTreeMap<ApiElement, Vec<String>> = predict_all(predictor, &aug, &elements, kb, config.k, config.eta)
        .into_iter()
        .filter(|(_, l)| !l.is_empty())
        .map(|(e, l)| (e, l.ranked))
        .collect();
    combine_across(&BTreeMap::new(), &lists, &elements)
}

/// Runs the requested engine and returns its per-element answers.
pub fn run_engine(
    engine: Engine,
    snippet: &Snippet,
    kb: &KnowledgeBase,
    predictor: &dyn Predictor,
    config: &RunConfig,
) -> Result<CombinedResult, RunError> {
    config.validate()?;
    Ok(match engine {
        Engine::Combined => run(snippet, kb, predictor, config)?.combined,
        Engine::ConstraintOnly => constraint_only(snippet, kb, config),
        Engine::StatOnly => stat_only(snippet, kb, predictor, config),
    })
}

#[derive(Serialize)]
struct TraceElement<'a> {
    element: String,
    constraint: &'a str,
    stat: &'a [String],
}

#[derive(Serialize)]
struct TraceLine<'a> {
    round: usize,
    kb_entries: usize,
    elements: Vec<TraceElement<'a>>,
}

/// One JSON object per round, fields in a fixed order.
pub fn trace_to_jsonl(elements: &[ApiElement], trace: &[RoundRecord]) -> String {
    let mut out = String::new();
    for record in trace {
        let line = TraceLine {
            round: record.round,
            kb_entries: record.reduced_kb_size,
            elements: elements
                .iter()
                .map(|e| TraceElement {
                    element: e.key(),
                    constraint: record.constraint_result.typed.get(e).map(String::as_str).unwrap_or("-"),
                    stat: record.stat_result.get(e).map(|l| l.ranked.as_slice()).unwrap_or(&[]),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&line).expect("serializable"));
        out.push('\n');
    }
    out
}
