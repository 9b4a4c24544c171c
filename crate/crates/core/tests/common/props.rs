//! Randomised properties. Each function runs its own proptest runner so
//! the same checks back both the property tests and the acceptance report.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use jtyper::constraint::{solve, Constraint, ConstraintResult, Coverage, ExtractOptions, SubType};
use jtyper::eval::{aggregate, score_snippet, GroundTruth, SnippetScore};
use jtyper::kb::{reduce_kb, CanTypeSet, FieldSig, KnowledgeBase, MethodSig, TypeEntry, TypeKind};
use jtyper::orchestrator::{combine_across, combine_per_method, RoundRecord, Source};
use jtyper::snippet::{augment, identify_api_elements, tokenize, ApiElement, IdentifyOptions, SyntacticRole};
use jtyper::stat::CandidateList;

use super::oracle::brute_force;

pub const CASES: u32 = 1000;

fn runner() -> TestRunner {
    TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    })
}

fn check<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    runner().run(&strategy, test).map_err(|e| e.to_string())
}

const PACKAGES: [&str; 4] = ["p", "q", "r", "s"];
const NAMES: [&str; 4] = ["A", "B", "C", "D"];
const LIBS: [&str; 3] = ["l1", "l2", "l3"];
/// Method name, arity.
const METHODS: [(&str, usize); 2] = [("m", 0), ("n", 1)];

#[derive(Debug, Clone)]
struct EntrySpec {
    package: usize,
    name: usize,
    interface: bool,
    library: usize,
    supers: Vec<usize>,
    methods: [bool; 2],
    field: Option<bool>,
}

fn entry_spec() -> impl Strategy<Value = EntrySpec> {
    (
        0..PACKAGES.len(),
        0..NAMES.len(),
        any::<bool>(),
        0..LIBS.len(),
        prop::collection::vec(0..12usize, 0..3),
        any::<[bool; 2]>(),
        prop::option::of(any::<bool>()),
    )
        .prop_map(
            |(package, name, interface, library, supers, methods, field)| EntrySpec {
                package,
                name,
                interface,
                library,
                supers,
                methods,
                field,
            },
        )
}

/// Per method name: static flag and return-type pick, shared by every owner
/// so lookups through different supertypes agree.
fn method_attrs() -> impl Strategy<Value = [(bool, Option<usize>); 2]> {
    any::<[(bool, Option<u8>); 2]>().prop_map(|a| a.map(|(s, r)| (s, r.map(usize::from))))
}

fn build_kb(specs: &[EntrySpec], attrs: &[(bool, Option<usize>); 2]) -> KnowledgeBase {
    let mut seen = BTreeSet::new();
    let specs: Vec<&EntrySpec> = specs.iter().filter(|s| seen.insert((s.package, s.name))).collect();
    let fqn = |s: &EntrySpec| format!("{}.{}", PACKAGES[s.package], NAMES[s.name]);
    let fqns: Vec<String> = specs.iter().map(|s| fqn(s)).collect();
    let entries = specs.iter().enumerate().map(|(i, s)| {
        let kind = if s.interface {
            TypeKind::Interface
        } else {
            TypeKind::Class
        };
        let mut e = TypeEntry::new(&fqns[i], kind, LIBS[s.library]);
        for &j in &s.supers {
            let j = j % specs.len();
            if j == i {
                continue;
            }
            if specs[j].interface && !s.interface {
                e.implements.insert(fqns[j].clone());
            } else {
                e.extends.insert(fqns[j].clone());
            }
        }
        for (k, present) in s.methods.iter().enumerate() {
            if *present {
                let (name, arity) = METHODS[k];
                let (is_static, ret) = attrs[k];
                e.methods.insert(
                    (name.to_string(), arity),
                    MethodSig {
                        name: name.to_string(),
                        arity,
                        is_static,
                        return_fqn: ret.map(|r| fqns[r % fqns.len()].clone()),
                    },
                );
            }
        }
        if let Some(is_static) = s.field {
            e.fields.insert(
                "f".to_string(),
                FieldSig {
                    name: "f".to_string(),
                    type_fqn: None,
                    is_static,
                },
            );
        }
        e
    });
    KnowledgeBase::from_entries(entries.collect::<Vec<_>>())
}

fn arb_kb() -> impl Strategy<Value = KnowledgeBase> {
    (prop::collection::vec(entry_spec(), 1..=12), method_attrs()).prop_map(|(s, a)| build_kb(&s, &a))
}

fn ancestors(kb: &KnowledgeBase, fqn: &str) -> BTreeSet<String> {
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([fqn.to_string()]);
    while let Some(f) = queue.pop_front() {
        if let Some(e) = kb.get(&f) {
            if seen.insert(f.clone()) {
                queue.extend(e.extends.iter().cloned());
                queue.extend(e.implements.iter().cloned());
            }
        }
    }
    seen
}

/// Subset, closure, monotonicity, and agreement with a direct ancestor walk.
pub fn kb_reduction() -> Result<(), String> {
    let strategy = arb_kb().prop_flat_map(|kb| {
        let n = kb.len();
        (
            Just(kb),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(any::<bool>(), n),
        )
    });
    check(strategy, |(kb, in_big, in_small)| {
        let fqns: Vec<String> = kb.fqns().cloned().collect();
        let big: BTreeSet<String> = fqns
            .iter()
            .zip(&in_big)
            .filter(|(_, b)| **b)
            .map(|(f, _)| f.clone())
            .collect();
        let small: BTreeSet<String> = big
            .iter()
            .zip(&in_small)
            .filter(|(_, b)| **b)
            .map(|(f, _)| f.clone())
            .collect();
        let r_big = reduce_kb(&kb, &CanTypeSet { fqns: big.clone() }).unwrap();
        let r_small = reduce_kb(&kb, &CanTypeSet { fqns: small }).unwrap();
        for e in r_big.entries() {
            prop_assert_eq!(Some(e), kb.get(&e.fqn));
            for s in e.extends.iter().chain(&e.implements) {
                prop_assert!(r_big.contains(s), "closure broken at {} -> {}", e.fqn, s);
            }
        }
        let expected: BTreeSet<String> = big.iter().flat_map(|f| ancestors(&kb, f)).collect();
        let got: BTreeSet<String> = r_big.fqns().cloned().collect();
        prop_assert_eq!(&got, &expected);
        prop_assert!(r_small.fqns().all(|f| r_big.contains(f)));
        prop_assert!(r_big.index_is_consistent());
        let full = reduce_kb(
            &kb,
            &CanTypeSet {
                fqns: fqns.iter().cloned().collect(),
            },
        )
        .unwrap();
        prop_assert_eq!(full, kb);
        Ok(())
    })
}

fn java_ish() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        "[A-Z][a-z]{0,4}",
        "[a-z]{1,5}",
        Just(" ".to_string()),
        Just("\n".to_string()),
        Just(".".to_string()),
        Just("(".to_string()),
        Just(")".to_string()),
        Just(";".to_string()),
        Just(" = ".to_string()),
        Just("new ".to_string()),
        Just("<".to_string()),
        Just(">".to_string()),
        Just("{".to_string()),
        Just("}".to_string()),
        Just("\"s\"".to_string()),
        Just("// c\n".to_string()),
        Just(" extends ".to_string()),
        Just("class ".to_string()),
    ];
    prop::collection::vec(piece, 0..40).prop_map(|v| v.concat())
}

/// Concatenating token lexemes gives back the input, and line numbers
/// count the newlines before each token.
pub fn lexing_round_trip() -> Result<(), String> {
    let strategy = prop_oneof![any::<String>(), java_ish(), "[ -~\t\n]{0,120}"];
    check(strategy, |text| {
        let s = tokenize(&text);
        prop_assert_eq!(s.detokenize(), text.clone());
        let mut offset = 0;
        for t in &s.tokens {
            prop_assert!(!t.lexeme.is_empty());
            let line = 1 + text[..offset].matches('\n').count() as u32;
            prop_assert_eq!(t.line, line);
            offset += t.lexeme.len();
        }
        Ok(())
    })
}

/// Substitution touches exactly the chosen element tokens.
pub fn augmentation_alignment() -> Result<(), String> {
    let strategy = (
        java_ish(),
        prop::collection::vec(any::<bool>(), 40),
        "[a-z]{1,3}\\.[a-z]{1,3}",
    );
    check(strategy, |(text, picks, pkg)| {
        let snippet = tokenize(&text);
        let elements = identify_api_elements(&snippet, None, &IdentifyOptions::default());
        let typed: BTreeMap<ApiElement, String> = elements
            .iter()
            .zip(picks.iter().cycle())
            .filter(|(_, p)| **p)
            .map(|(e, _)| (e.clone(), format!("{pkg}.{}", e.simple_name)))
            .collect();
        let aug = augment(&snippet, &elements, &typed).unwrap();
        prop_assert_eq!(aug.len(), snippet.tokens.len());
        let by_index: BTreeMap<usize, &String> = typed.iter().map(|(e, f)| (e.token_index, f)).collect();
        for (i, t) in snippet.tokens.iter().enumerate() {
            prop_assert_eq!(aug.lines[i], t.line);
            prop_assert_eq!(aug.classes[i], t.class);
            match by_index.get(&i) {
                Some(f) => prop_assert_eq!(&aug.tokens[i], *f),
                None => prop_assert_eq!(&aug.tokens[i], &t.lexeme),
            }
        }
        prop_assert_eq!(aug.substitutions.len(), typed.len());
        Ok(())
    })
}

#[derive(Debug, Clone)]
enum Shape {
    Call(usize, usize, bool),
    Field(usize, bool),
    New(usize, bool),
    Extends(Option<usize>, bool, usize),
    Implements(Option<usize>, usize),
    Chain(usize, bool),
}

fn shape() -> impl Strategy<Value = Shape> {
    prop_oneof![
        (0..8usize, 0..2usize, any::<bool>()).prop_map(|(s, m, st)| Shape::Call(s, m, st)),
        (0..8usize, any::<bool>()).prop_map(|(s, st)| Shape::Field(s, st)),
        (0..8usize, any::<bool>()).prop_map(|(s, a)| Shape::New(s, a)),
        (prop::option::of(0..8usize), any::<bool>(), 0..8usize).prop_map(|(a, k, b)| Shape::Extends(a, k, b)),
        (prop::option::of(0..8usize), 0..8usize).prop_map(|(a, b)| Shape::Implements(a, b)),
        (0..8usize, any::<bool>()).prop_map(|(r, order)| Shape::Chain(r, order)),
    ]
}

fn materialize(n: usize, shapes: &[Shape], assigns: &[(usize, usize)]) -> Vec<Constraint> {
    let sub = |a: Option<usize>, interface: bool| match a {
        Some(a) => SubType::Element(a % n),
        None => SubType::Local {
            name: "Local".into(),
            kind: if interface {
                TypeKind::Interface
            } else {
                TypeKind::Class
            },
        },
    };
    let mut out: Vec<Constraint> = shapes
        .iter()
        .map(|s| match s {
            Shape::Call(subject, m, st) => Constraint::MemberCall {
                subject: subject % n,
                method: METHODS[*m].0.into(),
                arity: METHODS[*m].1,
                static_call: *st,
            },
            Shape::Field(subject, st) => Constraint::FieldAccess {
                subject: subject % n,
                field: "f".into(),
                static_access: *st,
            },
            Shape::New(subject, anonymous) => Constraint::Construction {
                subject: subject % n,
                arity: 0,
                anonymous: *anonymous,
            },
            Shape::Extends(a, k, b) => Constraint::Extends {
                sub: sub(*a, *k),
                sup: b % n,
            },
            Shape::Implements(a, b) => Constraint::Implements {
                sub: sub(*a, false),
                sup: b % n,
            },
            Shape::Chain(root, order) => Constraint::CascadedCall {
                root: root % n,
                chain: if *order {
                    vec![("m".into(), 0), ("n".into(), 1)]
                } else {
                    vec![("n".into(), 1), ("m".into(), 0)]
                },
            },
        })
        .collect();
    let base = out.len();
    if base > 0 {
        for (d, s) in assigns {
            out.push(Constraint::DeclaredAssignment {
                declared: d % n,
                source: s % base,
            });
        }
    }
    out
}

/// The search agrees with exhaustive enumeration on small instances.
pub fn solver_soundness() -> Result<(), String> {
    let strategy = (
        arb_kb(),
        prop::collection::vec(0..NAMES.len(), 1..=8),
        prop::collection::vec(shape(), 0..=6),
        prop::collection::vec((0..8usize, 0..8usize), 0..=3),
        prop::collection::vec(any::<bool>(), 8),
        any::<bool>(),
    );
    check(strategy, |(kb, names, shapes, assigns, covered, strict)| {
        let elements: Vec<ApiElement> = names
            .iter()
            .enumerate()
            .map(|(i, &n)| ApiElement {
                token_index: i,
                simple_name: NAMES[n].to_string(),
                line: 1,
                occurrence: i as u32 + 1,
                role: SyntacticRole::Other,
            })
            .collect();
        let constraints = materialize(elements.len(), &shapes, &assigns);
        let coverage = Coverage {
            token_ranges: (0..elements.len()).filter(|&i| covered[i]).map(|i| i..i + 1).collect(),
        };
        let options = ExtractOptions {
            cascaded_calls: true,
            strict_body_check: true,
            strict_uniqueness: strict,
        };
        let got = solve(&kb, &elements, &constraints, &coverage, &options);
        let want = brute_force(&kb, &elements, &constraints, &coverage, strict);
        let got_typed: BTreeMap<usize, String> = got.typed.iter().map(|(e, f)| (e.token_index, f.clone())).collect();
        let got_untyped: BTreeSet<usize> = got.untyped.iter().map(|e| e.token_index).collect();
        prop_assert_eq!(got_typed, want.typed);
        prop_assert_eq!(got_untyped, want.untyped);
        Ok(())
    })
}

fn elem(i: usize) -> ApiElement {
    ApiElement {
        token_index: i,
        simple_name: "T".into(),
        line: i as u32 + 1,
        occurrence: 1,
        role: SyntacticRole::Other,
    }
}

const POOL: [&str; 4] = ["a.T", "b.T", "c.T", "d.T"];

/// Last success per engine, constraint precedence across engines.
pub fn combination_invariants() -> Result<(), String> {
    let round = |n: usize| {
        (
            prop::collection::vec(prop::option::of(0..POOL.len()), n),
            prop::collection::vec(prop::collection::vec(0..POOL.len(), 0..3), n),
        )
    };
    let strategy = (1..=5usize).prop_flat_map(move |n| (Just(n), prop::collection::vec(round(n), 1..=10)));
    check(strategy, |(n, rounds)| {
        let elements: Vec<ApiElement> = (0..n).map(elem).collect();
        let trace: Vec<RoundRecord> = rounds
            .iter()
            .enumerate()
            .map(|(r, (c, s))| RoundRecord {
                round: r + 1,
                constraint_result: ConstraintResult {
                    typed: c
                        .iter()
                        .enumerate()
                        .filter_map(|(i, t)| t.map(|t| (elem(i), POOL[t].to_string())))
                        .collect(),
                    untyped: c
                        .iter()
                        .enumerate()
                        .filter(|(_, t)| t.is_none())
                        .map(|(i, _)| elem(i))
                        .collect(),
                    coverage: Coverage::default(),
                },
                stat_result: s
                    .iter()
                    .enumerate()
                    .map(|(i, l)| {
                        (
                            elem(i),
                            CandidateList {
                                ranked: l.iter().map(|&t| POOL[t].to_string()).collect(),
                                k: 3,
                            },
                        )
                    })
                    .collect(),
                reduced_kb_size: 0,
            })
            .collect();
        let (comb_c, comb_s) = combine_per_method(&trace);
        let combined = combine_across(&comb_c, &comb_s, &elements);
        for (i, e) in elements.iter().enumerate() {
            let last_c = rounds.iter().rev().find_map(|(c, _)| c[i]).map(|t| POOL[t]);
            let last_s: Option<Vec<&str>> = rounds
                .iter()
                .rev()
                .find(|(_, s)| !s[i].is_empty())
                .map(|(_, s)| s[i].iter().map(|&t| POOL[t]).collect());
            prop_assert_eq!(comb_c.get(e).map(String::as_str), last_c);
            prop_assert_eq!(
                comb_s.get(e).map(|v| v.iter().map(String::as_str).collect::<Vec<_>>()),
                last_s.clone()
            );
            let o = &combined.per_element[e];
            match (last_c, last_s.as_ref().and_then(|l| l.first().copied())) {
                (Some(c), _) => {
                    prop_assert_eq!(o.final_fqn.as_deref(), Some(c));
                    prop_assert_eq!(o.source, Source::Constraint);
                }
                (None, Some(s)) => {
                    prop_assert_eq!(o.final_fqn.as_deref(), Some(s));
                    prop_assert_eq!(o.source, Source::Statistical);
                }
                (None, None) => {
                    prop_assert_eq!(o.final_fqn.as_deref(), None);
                    prop_assert_eq!(o.source, Source::None);
                }
            }
        }
        prop_assert_eq!(combined.per_element.len(), n);
        Ok(())
    })
}

fn arb_score() -> impl Strategy<Value = SnippetScore> {
    (0..6usize, 0..6usize, 1..8usize).prop_map(|(a, b, extra)| {
        let correct = a.min(b);
        let inferred = a.max(b);
        SnippetScore {
            inferred,
            correct,
            requested: inferred + extra - 1,
        }
    })
}

/// Reports do not depend on the order snippets are fed in.
pub fn aggregate_permutation() -> Result<(), String> {
    let strategy = prop::collection::vec((arb_score(), 0..3usize), 1..20).prop_flat_map(|rows| {
        let tagged: Vec<(SnippetScore, usize, usize)> =
            rows.into_iter().enumerate().map(|(i, (s, l))| (s, l, i)).collect();
        (Just(tagged.clone()), Just(tagged).prop_shuffle())
    });
    check(strategy, |(rows, shuffled)| {
        let build = |rows: &[(SnippetScore, usize, usize)]| {
            let mut scores = BTreeMap::new();
            let mut libs = BTreeMap::new();
            for (score, lib, id) in rows {
                scores.insert(format!("s{id:02}"), *score);
                libs.insert(format!("s{id:02}"), LIBS[*lib].to_string());
            }
            aggregate(&scores, &libs).unwrap()
        };
        let a = build(&rows);
        prop_assert_eq!(&a, &build(&shuffled));
        let mean_recall = rows
            .iter()
            .map(|r| {
                if r.0.requested == 0 {
                    0.0
                } else {
                    r.0.correct as f64 / r.0.requested as f64
                }
            })
            .sum::<f64>()
            / rows.len() as f64;
        prop_assert!((a.overall.recall - mean_recall).abs() < 1e-9);
        prop_assert_eq!(a.overall.n, rows.len());
        Ok(())
    })
}

/// An engine that answers every requested element has precision = recall,
/// per snippet and in aggregate.
pub fn full_answer_precision_recall() -> Result<(), String> {
    let snippet = prop::collection::vec(any::<bool>(), 1..10);
    let strategy = prop::collection::vec(snippet, 1..8);
    check(strategy, |snippets| {
        let mut scores = BTreeMap::new();
        let mut libs = BTreeMap::new();
        for (s, hits) in snippets.iter().enumerate() {
            let truth: BTreeMap<String, String> = (0..hits.len())
                .map(|i| (format!("T[{},1]", i + 1), format!("x.T{i}")))
                .collect();
            let answers: BTreeMap<String, String> = truth
                .iter()
                .zip(hits)
                .map(|((k, v), hit)| (k.clone(), if *hit { v.clone() } else { "y.Wrong".into() }))
                .collect();
            let gt = GroundTruth {
                snippet_id: format!("s{s}"),
                library: "l".into(),
                truth,
            };
            let score = score_snippet(&answers, &gt, false).unwrap();
            prop_assert_eq!(score.precision(), Some(score.recall()));
            scores.insert(gt.snippet_id.clone(), score);
            libs.insert(gt.snippet_id, gt.library);
        }
        let report = aggregate(&scores, &libs).unwrap();
        prop_assert_eq!(report.overall.precision, Some(report.overall.recall));
        Ok(())
    })
}

/// Every suite, in report order.
pub type Suite = fn() -> Result<(), String>;

pub fn all() -> Vec<(&'static str, Suite)> {
    vec![
        ("kb reduction subset/closure/monotonicity", kb_reduction),
        ("lossless lexing round-trip", lexing_round_trip),
        ("augmentation alignment", augmentation_alignment),
        ("solver vs brute-force oracle", solver_soundness),
        ("combination criteria", combination_invariants),
        ("aggregate permutation invariance", aggregate_permutation),
        ("precision = recall for full answers", full_answer_precision_recall),
    ]
}
