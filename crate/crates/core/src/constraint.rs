//! Constraint-based engine: a best-effort structural pass over the token
//! stream that extracts type constraints, and a solver that filters
//! knowledge-base candidates and picks a library-minimal assignment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::kb::{candidates_for, KnowledgeBase, TypeKind};
use crate::snippet::{local_type_names, ApiElement, SigView, Snippet, SyntacticRole};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractOptions {
    /// Follow `Name.a().b()` chains through declared return types.
    pub cascaded_calls: bool,
    /// Drop class bodies whose constructor name does not match the class.
    pub strict_body_check: bool,
    /// Abstain when optimal assignments disagree across libraries.
    pub strict_uniqueness: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            cascaded_calls: true,
            strict_body_check: true,
            strict_uniqueness: true,
        }
    }
}

/// Subclass side of an extends/implements edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubType {
    /// Index into the element list.
    Element(usize),
    /// A type declared in the snippet itself.
    Local { name: String, kind: TypeKind },
}

/// Element references are indices into the element list passed to
/// [`extract_constraints`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Constraint {
    MemberCall {
        subject: usize,
        method: String,
        arity: usize,
        static_call: bool,
    },
    FieldAccess {
        subject: usize,
        field: String,
        static_access: bool,
    },
    Construction {
        subject: usize,
        arity: usize,
        /// `new T() { ... }`: an interface is acceptable.
        anonymous: bool,
    },
    Extends {
        sub: SubType,
        sup: usize,
    },
    Implements {
        sub: SubType,
        sup: usize,
    },
    CascadedCall {
        root: usize,
        chain: Vec<(String, usize)>,
    },
    /// `declared v = <source>`, where source indexes a `MemberCall` or
    /// `Construction` in the same constraint list.
    DeclaredAssignment {
        declared: usize,
        source: usize,
    },
}

impl Constraint {
    /// Elements this constraint mentions directly.
    pub fn elements(&self, all: &[Constraint]) -> Vec<usize> {
        match self {
            Constraint::MemberCall { subject, .. }
            | Constraint::FieldAccess { subject, .. }
            | Constraint::Construction { subject, .. } => vec![*subject],
            Constraint::CascadedCall { root, .. } => vec![*root],
            Constraint::Extends { sub, sup } | Constraint::Implements { sub, sup } => match sub {
                SubType::Element(e) => vec![*e, *sup],
                SubType::Local { .. } => vec![*sup],
            },
            Constraint::DeclaredAssignment { declared, source } => {
                let mut v = vec![*declared];
                if let Some(src) = all.get(*source) {
                    v.extend(src.elements(all));
                }
                v
            }
        }
    }

    /// One-line human-readable form used by the diagnostics trace.
    pub fn describe(&self, elements: &[ApiElement], all: &[Constraint]) -> String {
        let key = |i: usize| elements.get(i).map(|e| e.key()).unwrap_or_else(|| format!("#{i}"));
        let sub_str = |s: &SubType| match s {
            SubType::Element(e) => key(*e),
            SubType::Local { name, kind } => format!("local {} {}", kind.as_str(), name),
        };
        match self {
            Constraint::MemberCall {
                subject,
                method,
                arity,
                static_call,
            } => format!(
                "call {}{}{}/{}",
                key(*subject),
                if *static_call { "::" } else { "." },
                method,
                arity
            ),
            Constraint::FieldAccess {
                subject,
                field,
                static_access,
            } => format!(
                "field {}{}{}",
                key(*subject),
                if *static_access { "::" } else { "." },
                field
            ),
            Constraint::Construction {
                subject,
                arity,
                anonymous,
            } => {
                format!(
                    "new {}/{}{}",
                    key(*subject),
                    arity,
                    if *anonymous { " {..}" } else { "" }
                )
            }
            Constraint::Extends { sub, sup } => format!("extends {} <: {}", sub_str(sub), key(*sup)),
            Constraint::Implements { sub, sup } => format!("implements {} <: {}", sub_str(sub), key(*sup)),
            Constraint::CascadedCall { root, chain } => {
                let hops: Vec<String> = chain.iter().map(|(n, a)| format!("{n}/{a}")).collect();
                format!("chain {}::{}", key(*root), hops.join("."))
            }
            Constraint::DeclaredAssignment { declared, source } => {
                let src = all
                    .get(*source)
                    .map(|c| c.describe(elements, all))
                    .unwrap_or_else(|| format!("#{source}"));
                format!("assign {} := {}", key(*declared), src)
            }
        }
    }
}

/// Token ranges (indices into `Snippet::tokens`) the structural pass could
/// analyse.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Coverage {
    pub token_ranges: Vec<Range<usize>>,
}

impl Coverage {
    pub fn covers(&self, token_index: usize) -> bool {
        self.token_ranges.iter().any(|r| r.contains(&token_index))
    }

    /// Line spans `(first, last)` touched by covered tokens.
    pub fn line_ranges(&self, snippet: &Snippet) -> Vec<(u32, u32)> {
        self.token_ranges
            .iter()
            .filter(|r| !r.is_empty())
            .map(|r| (snippet.tokens[r.start].line, snippet.tokens[r.end - 1].line))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConstraintResult {
    pub typed: BTreeMap<ApiElement, String>,
    pub untyped: BTreeSet<ApiElement>,
    pub coverage: Coverage,
}

impl fmt::Display for ConstraintResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (e, t) in &self.typed {
            writeln!(f, "{e}\t{t}")?;
        }
        for e in &self.untyped {
            writeln!(f, "{e}\t-")?;
        }
        Ok(())
    }
}

/// Sig-view ranges inside class bodies whose constructor name does not match
/// the class name.
fn broken_bodies(view: &SigView<'_>) -> Vec<Range<usize>> {
    let locals = local_type_names(view);
    let mut broken = Vec::new();
    for s in 0..view.len() {
        if view.text(s) != "class" || !view.is_ident(s + 1) {
            continue;
        }
        let class_name = view.text(s + 1);
        let Some(open) = (s + 2..view.len()).find(|&j| view.is(j, "{") || view.is(j, ";")) else {
            continue;
        };
        if !view.is(open, "{") {
            continue;
        }
        let close = view.matching(open, "{", "}").unwrap_or(view.len());
        let mismatched = (open + 1..close).any(|j| {
            let name = view.text(j);
            view.is_ident(j)
                && name != class_name
                && !locals.contains(name)
                && name.chars().next().is_some_and(char::is_uppercase)
                && view.is(j + 1, "(")
                && {
                    let prev = view.prev_text(j);
                    matches!(prev, "{" | ";" | "}") || crate::snippet::is_modifier(prev)
                }
                && view
                    .matching_paren(j + 1)
                    .is_some_and(|c| view.is(c + 1, "{") || view.is(c + 1, "throws"))
        });
        if mismatched {
            broken.push(open..close.saturating_add(1).min(view.len()));
        }
    }
    broken
}

/// Counts top-level arguments between the parenthesis at `open` and its
/// match.
fn arity(view: &SigView<'_>, open: usize, close: usize) -> usize {
    if close == open + 1 {
        return 0;
    }
    let mut depth = 0i32;
    let mut commas = 0;
    for j in open + 1..close {
        match view.text(j) {
            "(" | "{" | "[" => depth += 1,
            ")" | "}" | "]" => depth -= 1,
            "," if depth == 0 => commas += 1,
            _ => {}
        }
    }
    commas + 1
}

enum Hop {
    Call(String, usize, usize),
    Field(String, usize),
}

/// Parses `.name(args)` / `.name` hops starting at the `.` at `s`.
fn member_hops(view: &SigView<'_>, mut s: usize) -> Vec<Hop> {
    let mut hops = Vec::new();
    while view.is(s, ".") && view.is_ident(s + 1) {
        let name = view.text(s + 1).to_string();
        if view.is(s + 2, "(") {
            let Some(close) = view.matching_paren(s + 2) else { break };
            hops.push(Hop::Call(name, arity(view, s + 2, close), close));
            s = close + 1;
        } else {
            hops.push(Hop::Field(name, s + 1));
            break;
        }
    }
    hops
}

/// Extracts constraints among `elements`. Regions the pass cannot analyse
/// contribute nothing and are left out of the returned coverage.
pub fn extract_constraints(
    snippet: &Snippet,
    elements: &[ApiElement],
    options: &ExtractOptions,
) -> (Vec<Constraint>, Coverage) {
    let view = SigView::new(snippet);
    let n_tokens = snippet.tokens.len();

    let broken: Vec<Range<usize>> = if options.strict_body_check {
        broken_bodies(&view)
            .into_iter()
            .map(|r| {
                let start = view.idx[r.start];
                let end = if r.end >= view.len() { n_tokens } else { view.idx[r.end] };
                start..end
            })
            .collect()
    } else {
        Vec::new()
    };
    let coverage = complement(&broken, n_tokens);

    let sig_of_token: BTreeMap<usize, usize> = view.idx.iter().enumerate().map(|(s, &t)| (t, s)).collect();
    let element_at: BTreeMap<usize, usize> = elements
        .iter()
        .enumerate()
        .filter_map(|(i, e)| sig_of_token.get(&e.token_index).map(|&s| (s, i)))
        .collect();
    let covered_sig = |s: usize| view.idx.get(s).is_some_and(|&t| coverage.covers(t));

    // var name -> (sig position of the name, element index of its type)
    let mut decls: Vec<(usize, String, usize)> = Vec::new();
    for (&s, &ei) in &element_at {
        let a = view.after_type_suffix(s + 1);
        if view.is_ident(a) && matches!(view.text(a + 1), "=" | ";" | "," | ")" | ":" | "[") {
            decls.push((a, view.text(a).to_string(), ei));
        }
    }
    let lookup_var = |name: &str, at: usize| -> Option<usize> {
        decls
            .iter()
            .filter(|(pos, n, _)| n == name && *pos < at)
            .max_by_key(|(pos, _, _)| *pos)
            .map(|(_, _, ei)| *ei)
    };

    let mut constraints = Vec::new();
    // start sig position -> (constraint index, sig position of the last token)
    let mut starts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();

    for s in 0..view.len() {
        if !covered_sig(s) {
            continue;
        }
        if view.is(s, "new") {
            if let Some(&ei) = element_at.get(&(s + 1)) {
                let p = view.skip_generics(s + 2).unwrap_or(s + 2);
                if let Some(close) = view.matching_paren(p) {
                    starts.insert(s, (constraints.len(), close));
                    constraints.push(Constraint::Construction {
                        subject: ei,
                        arity: arity(&view, p, close),
                        anonymous: view.is(close + 1, "{"),
                    });
                }
            }
            continue;
        }
        if !view.is_ident(s) || view.prev_text(s) == "." {
            continue;
        }
        let (subject, static_call) = match element_at.get(&s) {
            Some(&ei) if elements[ei].role == SyntacticRole::StaticReceiver => (ei, true),
            Some(_) => continue,
            None => match lookup_var(view.text(s), s) {
                Some(ei) => (ei, false),
                None => continue,
            },
        };
        if !covered_sig(sig_of_token[&elements[subject].token_index]) {
            continue;
        }
        let hops = member_hops(&view, s + 1);
        match hops.first() {
            None => {}
            Some(Hop::Field(field, end)) => {
                starts.insert(s, (constraints.len(), *end));
                constraints.push(Constraint::FieldAccess {
                    subject,
                    field: field.clone(),
                    static_access: static_call,
                });
            }
            Some(Hop::Call(method, n, close)) => {
                let calls: Vec<(String, usize)> = hops
                    .iter()
                    .map_while(|h| match h {
                        Hop::Call(m, a, _) => Some((m.clone(), *a)),
                        Hop::Field(..) => None,
                    })
                    .collect();
                if static_call && options.cascaded_calls && calls.len() >= 2 {
                    constraints.push(Constraint::CascadedCall {
                        root: subject,
                        chain: calls,
                    });
                } else {
                    starts.insert(s, (constraints.len(), *close));
                    constraints.push(Constraint::MemberCall {
                        subject,
                        method: method.clone(),
                        arity: *n,
                        static_call,
                    });
                }
            }
        }
    }

    // extends / implements clauses
    for (&s, &ei) in &element_at {
        if !covered_sig(s) {
            continue;
        }
        let role = elements[ei].role;
        if !matches!(role, SyntacticRole::ExtendsClause | SyntacticRole::ImplementsClause) {
            continue;
        }
        let Some(header) = (0..s).rev().find(|&j| matches!(view.text(j), "class" | "interface")) else {
            continue;
        };
        let kind = if view.is(header, "interface") {
            TypeKind::Interface
        } else {
            TypeKind::Class
        };
        let name = view.text(header + 1);
        let sub = match element_at.get(&(header + 1)) {
            Some(&sub_el) => SubType::Element(sub_el),
            None => SubType::Local {
                name: name.to_string(),
                kind,
            },
        };
        constraints.push(if role == SyntacticRole::ExtendsClause {
            Constraint::Extends { sub, sup: ei }
        } else {
            Constraint::Implements { sub, sup: ei }
        });
    }

    // Type v = <single call or construction>;
    for (a, _, ei) in &decls {
        if !view.is(a + 1, "=") || !covered_sig(*a) {
            continue;
        }
        if let Some(&(ci, end)) = starts.get(&(a + 2)) {
            if matches!(view.text(end + 1), ";" | "," | ")") {
                constraints.push(Constraint::DeclaredAssignment {
                    declared: *ei,
                    source: ci,
                });
            }
        }
    }

    (constraints, coverage)
}

fn complement(excluded: &[Range<usize>], len: usize) -> Coverage {
    let mut marks = vec![true; len];
    for r in excluded {
        for m in &mut marks[r.start.min(len)..r.end.min(len)] {
            *m = false;
        }
    }
    let mut ranges = Vec::new();
    let mut i = 0;
    while i < len {
        if marks[i] {
            let start = i;
            while i < len && marks[i] {
                i += 1;
            }
            ranges.push(start..i);
        } else {
            i += 1;
        }
    }
    Coverage { token_ranges: ranges }
}

/// Whether `candidate` for the constrained element satisfies a constraint
/// that involves only that element.
fn unary_ok(kb: &KnowledgeBase, c: &Constraint, candidate: &str) -> bool {
    let Some(entry) = kb.get(candidate) else { return false };
    match c {
        Constraint::MemberCall {
            method,
            arity,
            static_call,
            ..
        } => kb
            .find_method(candidate, method, *arity)
            .is_some_and(|m| m.is_static || !static_call),
        Constraint::FieldAccess {
            field, static_access, ..
        } => kb
            .find_field(candidate, field)
            .is_some_and(|f| f.is_static || !static_access),
        Constraint::Construction { anonymous, .. } => *anonymous || entry.kind == TypeKind::Class,
        Constraint::CascadedCall { chain, .. } => chain_resolves(kb, candidate, chain),
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

fn chain_resolves(kb: &KnowledgeBase, root: &str, chain: &[(String, usize)]) -> bool {
    let mut current = root.to_string();
    for (i, (name, arity)) in chain.iter().enumerate() {
        let Some(m) = kb.find_method(&current, name, *arity) else {
            return false;
        };
        if i == 0 && !m.is_static {
            return false;
        }
        if i + 1 == chain.len() {
            return true;
        }
        match &m.return_fqn {
            Some(r) if kb.contains(r) => current = r.clone(),
            _ => return false,
        }
    }
    true
}

/// A constraint between two elements, checked on a pair of candidates.
#[derive(Debug, Clone)]
enum Binary {
    /// `sub` candidate must be a subtype of `sup` candidate.
    Subtype { sub: usize, sup: usize },
    /// `declared` must accept the return of `method` on `subject`.
    Returns {
        declared: usize,
        subject: usize,
        method: String,
        arity: usize,
    },
}

impl Binary {
    fn endpoints(&self) -> (usize, usize) {
        match self {
            Binary::Subtype { sub, sup } => (*sub, *sup),
            Binary::Returns { declared, subject, .. } => (*declared, *subject),
        }
    }

    fn holds(&self, kb: &KnowledgeBase, assignment: &[Option<&str>]) -> bool {
        let (a, b) = self.endpoints();
        let (Some(x), Some(y)) = (assignment[a], assignment[b]) else {
            return true;
        };
        match self {
            Binary::Subtype { .. } => kb.is_subtype(x, y),
            Binary::Returns { method, arity, .. } => match kb.find_method(y, method, *arity) {
                Some(m) => match &m.return_fqn {
                    Some(r) if kb.contains(r) => kb.is_subtype(r, x),
                    _ => true,
                },
                None => true,
            },
        }
    }
}

fn binaries(constraints: &[Constraint]) -> Vec<Binary> {
    let mut out = Vec::new();
    for c in constraints {
        match c {
            Constraint::Extends {
                sub: SubType::Element(sub),
                sup,
            }
            | Constraint::Implements {
                sub: SubType::Element(sub),
                sup,
            } => out.push(Binary::Subtype { sub: *sub, sup: *sup }),
            Constraint::DeclaredAssignment { declared, source } => match constraints.get(*source) {
                Some(Constraint::MemberCall {
                    subject, method, arity, ..
                }) => out.push(Binary::Returns {
                    declared: *declared,
                    subject: *subject,
                    method: method.clone(),
                    arity: *arity,
                }),
                Some(Constraint::Construction { subject, .. }) => out.push(Binary::Subtype {
                    sub: *subject,
                    sup: *declared,
                }),
                _ => {}
            },
            _ => {}
        }
    }
    out
}

fn unary_subject(c: &Constraint) -> Option<usize> {
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

/// Per-element candidates after unary filtering. Elements outside coverage
/// get an empty domain.
pub fn candidate_domains(
    kb: &KnowledgeBase,
    elements: &[ApiElement],
    constraints: &[Constraint],
    coverage: &Coverage,
) -> Vec<Vec<String>> {
    elements
        .iter()
        .enumerate()
        .map(|(i, e)| {
            if !coverage.covers(e.token_index) {
                return Vec::new();
            }
            candidates_for(kb, &e.simple_name)
                .into_iter()
                .filter(|cand| {
                    constraints
                        .iter()
                        .filter(|c| unary_subject(c) == Some(i))
                        .all(|c| unary_ok(kb, c, cand))
                })
                .map(str::to_string)
                .collect()
        })
        .collect()
}

#[derive(Default)]
struct Search<'a> {
    best: Option<(usize, usize)>,
    best_assignment: Vec<Option<&'a str>>,
    /// Values seen per element across all optimal assignments.
    optimal_values: Vec<BTreeSet<&'a str>>,
}

struct SearchCtx<'a> {
    kb: &'a KnowledgeBase,
    domains: &'a [Vec<String>],
    active: Vec<usize>,
    binaries: Vec<Binary>,
}

impl<'a> SearchCtx<'a> {
    fn violations_at(&self, assignment: &[Option<&str>], just_set: usize) -> usize {
        self.binaries
            .iter()
            .filter(|b| {
                let (x, y) = b.endpoints();
                (x == just_set || y == just_set) && !b.holds(self.kb, assignment)
            })
            .count()
    }

    fn dfs(
        &self,
        depth: usize,
        assignment: &mut Vec<Option<&'a str>>,
        violations: usize,
        libs: &mut BTreeMap<&'a str, usize>,
        out: &mut Search<'a>,
    ) {
        let score = (violations, libs.len());
        if let Some(best) = out.best {
            if score > best {
                return;
            }
        }
        if depth == self.active.len() {
            match out.best {
                Some(best) if score == best => {
                    for &e in &self.active {
                        out.optimal_values[e].insert(assignment[e].expect("assigned"));
                    }
                    // Enumeration is in lexicographic order, so the first
                    // optimal assignment found is the smallest.
                }
                _ => {
                    out.best = Some(score);
                    out.best_assignment = assignment.clone();
                    for set in out.optimal_values.iter_mut() {
                        set.clear();
                    }
                    for &e in &self.active {
                        out.optimal_values[e].insert(assignment[e].expect("assigned"));
                    }
                }
            }
            return;
        }
        let e = self.active[depth];
        for cand in &self.domains[e] {
            assignment[e] = Some(cand.as_str());
            // Only binaries whose both endpoints are already set count.
            let added = if self.binaries.iter().any(|b| {
                let (x, y) = b.endpoints();
                x == e || y == e
            }) {
                self.violations_at(assignment, e)
            } else {
                0
            };
            let lib = self.kb.get(cand).map(|t| t.library.as_str()).unwrap_or("");
            *libs.entry(lib).or_insert(0) += 1;
            self.dfs(depth + 1, assignment, violations + added, libs, out);
            let count = libs.get_mut(lib).expect("inserted");
            *count -= 1;
            if *count == 0 {
                libs.remove(lib);
            }
        }
        assignment[e] = None;
    }
}

/// Solves for a library-minimal, constraint-consistent assignment.
pub fn solve(
    kb: &KnowledgeBase,
    elements: &[ApiElement],
    constraints: &[Constraint],
    coverage: &Coverage,
    options: &ExtractOptions,
) -> ConstraintResult {
    let domains = candidate_domains(kb, elements, constraints, coverage);
    let active: Vec<usize> = (0..elements.len()).filter(|&i| !domains[i].is_empty()).collect();
    let binaries: Vec<Binary> = binaries(constraints)
        .into_iter()
        .filter(|b| {
            let (x, y) = b.endpoints();
            !domains[x].is_empty() && !domains[y].is_empty()
        })
        .collect();
    let ctx = SearchCtx {
        kb,
        domains: &domains,
        active,
        binaries,
    };
    let mut search = Search {
        best: None,
        best_assignment: vec![None; elements.len()],
        optimal_values: vec![BTreeSet::new(); elements.len()],
    };
    let mut assignment = vec![None; elements.len()];
    ctx.dfs(0, &mut assignment, 0, &mut BTreeMap::new(), &mut search);

    let mut result = ConstraintResult {
        coverage: coverage.clone(),
        ..Default::default()
    };
    for (i, element) in elements.iter().enumerate() {
        let chosen = search.best_assignment.get(i).copied().flatten();
        let verdict = chosen.filter(|_| {
            let violated = ctx.binaries.iter().any(|b| {
                let (x, y) = b.endpoints();
                (x == i || y == i) && !b.holds(kb, &search.best_assignment)
            });
            let libraries: BTreeSet<&str> = search.optimal_values[i]
                .iter()
                .filter_map(|f| kb.get(f).map(|t| t.library.as_str()))
                .collect();
            !violated && !(options.strict_uniqueness && libraries.len() > 1)
        });
        match verdict {
            Some(fqn) => {
                result.typed.insert(element.clone(), fqn.to_string());
            }
            None => {
                result.untyped.insert(element.clone());
            }
        }
    }
    result
}

/// Convenience: extract and solve in one step.
pub fn infer(
    kb: &KnowledgeBase,
    snippet: &Snippet,
    elements: &[ApiElement],
    options: &ExtractOptions,
) -> ConstraintResult {
    let (constraints, coverage) = extract_constraints(snippet, elements, options);
    solve(kb, elements, &constraints, &coverage, options)
}
