//! Exhaustive reference solver used to check the constraint engine.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use jtyper::constraint::{Constraint, Coverage, SubType};
use jtyper::kb::{KnowledgeBase, MethodSig, TypeKind};
use jtyper::snippet::ApiElement;

fn ancestors(kb: &KnowledgeBase, fqn: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut order = Vec::new();
    let mut queue = VecDeque::from([fqn.to_string()]);
    while let Some(f) = queue.pop_front() {
        if !seen.insert(f.clone()) {
            continue;
        }
        if let Some(e) = kb.get(&f) {
            order.push(f.clone());
            queue.extend(e.extends.iter().cloned());
            queue.extend(e.implements.iter().cloned());
        }
    }
    order
}

fn subtype(kb: &KnowledgeBase, sub: &str, sup: &str) -> bool {
    ancestors(kb, sub).iter().any(|a| a == sup)
}

fn method<'a>(kb: &'a KnowledgeBase, fqn: &str, name: &str, arity: usize) -> Option<&'a MethodSig> {
    ancestors(kb, fqn)
        .iter()
        .find_map(|a| kb.get(a).and_then(|e| e.methods.get(&(name.to_string(), arity))))
}

fn unary(kb: &KnowledgeBase, c: &Constraint, cand: &str) -> bool {
    let entry = kb.get(cand).expect("candidate from kb");
    match c {
        Constraint::MemberCall {
            method: m,
            arity,
            static_call,
            ..
        } => method(kb, cand, m, *arity).is_some_and(|s| s.is_static || !*static_call),
        Constraint::FieldAccess {
            field, static_access, ..
        } => ancestors(kb, cand)
            .iter()
            .find_map(|a| kb.get(a).and_then(|e| e.fields.get(field)))
            .is_some_and(|f| f.is_static || !*static_access),
        Constraint::Construction { anonymous, .. } => *anonymous || entry.kind == TypeKind::Class,
        Constraint::CascadedCall { chain, .. } => {
            let mut current = cand.to_string();
            for (i, (name, arity)) in chain.iter().enumerate() {
                let Some(m) = method(kb, &current, name, *arity) else {
                    return false;
                };
                if i == 0 && !m.is_static {
                    return false;
                }
                if i + 1 < chain.len() {
                    match &m.return_fqn {
                        Some(r) if kb.contains(r) => current = r.clone(),
                        _ => return false,
                    }
                }
            }
            true
        }
        Constraint::Extends {
            sub: SubType::Local { kind, .. },
            ..
        } => entry.kind == *kind,
        Constraint::Implements {
            sub: SubType::Local { .. },
            ..
        } => entry.kind == TypeKind::Interface,
        _ => true,
    }
}

fn subject(c: &Constraint) -> Option<usize> {
    match c {
        Constraint::MemberCall { subject, .. }
        | Constraint::FieldAccess { subject, .. }
        | Constraint::Construction { subject, .. } => Some(*subject),
        Constraint::CascadedCall { root, .. } => Some(*root),
        Constraint::Extends {
            sub: SubType::Local { .. },
            sup,
        }
        | Constraint::Implements {
            sub: SubType::Local { .. },
            sup,
        } => Some(*sup),
        _ => None,
    }
}

/// (a, b, check) where check(a_value, b_value) must hold.
type Pair<'a> = (usize, usize, Box<dyn Fn(&str, &str) -> bool + 'a>);

fn pairs<'a>(kb: &'a KnowledgeBase, constraints: &'a [Constraint]) -> Vec<Pair<'a>> {
    let mut out: Vec<Pair<'a>> = Vec::new();
    for c in constraints {
        match c {
            Constraint::Extends {
                sub: SubType::Element(s),
                sup,
            }
            | Constraint::Implements {
                sub: SubType::Element(s),
                sup,
            } => out.push((*s, *sup, Box::new(move |x, y| subtype(kb, x, y)))),
            Constraint::DeclaredAssignment { declared, source } => match constraints.get(*source) {
                Some(Constraint::Construction { subject, .. }) => {
                    out.push((*subject, *declared, Box::new(move |x, y| subtype(kb, x, y))))
                }
                Some(Constraint::MemberCall {
                    subject,
                    method: m,
                    arity,
                    ..
                }) => out.push((
                    *declared,
                    *subject,
                    Box::new(
                        move |d, s| match method(kb, s, m, *arity).and_then(|sig| sig.return_fqn.clone()) {
                            Some(r) if kb.contains(&r) => subtype(kb, &r, d),
                            _ => true,
                        },
                    ),
                )),
                _ => {}
            },
            _ => {}
        }
    }
    out
}

pub struct OracleResult {
    pub typed: BTreeMap<usize, String>,
    pub untyped: BTreeSet<usize>,
}

/// Enumerates every assignment, keeps the lexicographically first one
/// minimising (violated pairs, distinct libraries), and applies the
/// abstention rules.
pub fn brute_force(
    kb: &KnowledgeBase,
    elements: &[ApiElement],
    constraints: &[Constraint],
    coverage: &Coverage,
    strict_uniqueness: bool,
) -> OracleResult {
    let domains: Vec<Vec<String>> = elements
        .iter()
        .enumerate()
        .map(|(i, e)| {
            if !coverage.covers(e.token_index) {
                return Vec::new();
            }
            kb.entries()
                .filter(|t| t.simple_name == e.simple_name)
                .map(|t| t.fqn.clone())
                .filter(|f| {
                    constraints
                        .iter()
                        .filter(|c| subject(c) == Some(i))
                        .all(|c| unary(kb, c, f))
                })
                .collect()
        })
        .collect();
    let active: Vec<usize> = (0..elements.len()).filter(|&i| !domains[i].is_empty()).collect();
    let checks: Vec<Pair> = pairs(kb, constraints)
        .into_iter()
        .filter(|(a, b, _)| !domains[*a].is_empty() && !domains[*b].is_empty())
        .collect();

    let mut best: Option<(usize, usize)> = None;
    let mut best_assignment: Vec<Option<String>> = vec![None; elements.len()];
    let mut optimal: Vec<BTreeSet<String>> = vec![BTreeSet::new(); elements.len()];
    let total: usize = active.iter().map(|&i| domains[i].len()).product();
    for mut code in 0..total {
        // Mixed-radix decode, last active element varying fastest.
        let mut assignment: Vec<Option<String>> = vec![None; elements.len()];
        for &i in active.iter().rev() {
            let n = domains[i].len();
            assignment[i] = Some(domains[i][code % n].clone());
            code /= n;
        }
        let violations = checks
            .iter()
            .filter(|(a, b, f)| !f(assignment[*a].as_deref().unwrap(), assignment[*b].as_deref().unwrap()))
            .count();
        let libs: BTreeSet<&str> = active
            .iter()
            .map(|&i| kb.get(assignment[i].as_deref().unwrap()).unwrap().library.as_str())
            .collect();
        let cost = (violations, libs.len());
        if best.is_none_or(|b| cost < b) {
            best = Some(cost);
            best_assignment = assignment.clone();
            optimal.iter_mut().for_each(BTreeSet::clear);
        }
        if best == Some(cost) {
            for &i in &active {
                optimal[i].insert(assignment[i].clone().unwrap());
            }
        }
    }

    let mut result = OracleResult {
        typed: BTreeMap::new(),
        untyped: BTreeSet::new(),
    };
    for i in 0..elements.len() {
        let Some(value) = best_assignment[i].clone() else {
            result.untyped.insert(i);
            continue;
        };
        let violated = checks.iter().any(|(a, b, f)| {
            (*a == i || *b == i)
                && !f(
                    best_assignment[*a].as_deref().unwrap(),
                    best_assignment[*b].as_deref().unwrap(),
                )
        });
        let libraries: BTreeSet<&str> = optimal[i].iter().map(|f| kb.get(f).unwrap().library.as_str()).collect();
        if violated || (strict_uniqueness && libraries.len() > 1) {
            result.untyped.insert(i);
        } else {
            result.typed.insert(i, value);
        }
    }
    result
}
