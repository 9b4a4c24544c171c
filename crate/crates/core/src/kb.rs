//! API knowledge base: type entries, members, supertype edges, and the
//! simple-name index the constraint engine searches.
//!
//! The on-disk format is line oriented:
//!
//! ```text
//! type <fqn> <class|interface> lib=<id> [extends=<fqn,...>] [implements=<fqn,...>] [external-super=<fqn,...>]
//! method <owner-fqn> <name>/<arity> [static] [returns=<fqn|?>]
//! field <owner-fqn> <name> [static] [type=<fqn|?>]
//! ```
//!
//! Records may appear in any order. Owners and supertypes are resolved after
//! the whole file has been read.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KbError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate type `{fqn}`")]
    DuplicateFqn { line: usize, fqn: String },
    #[error("line {line}: duplicate method `{owner}.{name}/{arity}`")]
    DuplicateMethod {
        line: usize,
        owner: String,
        name: String,
        arity: usize,
    },
    #[error("line {line}: duplicate field `{owner}.{name}`")]
    DuplicateField { line: usize, owner: String, name: String },
    #[error("line {line}: member owner `{owner}` is not a declared type")]
    UnknownOwner { line: usize, owner: String },
    #[error("dangling supertype `{supertype}` on `{fqn}` (declare it or list it under external-super)")]
    DanglingSupertype { fqn: String, supertype: String },
    #[error("unknown type `{0}`")]
    UnknownType(String),
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TypeKind {
    Class,
    Interface,
}

impl TypeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TypeKind::Class => "class",
            TypeKind::Interface => "interface",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MethodSig {
    pub name: String,
    pub arity: usize,
    pub is_static: bool,
    /// `None` when the return type is unknown (`returns=?` or omitted).
    pub return_fqn: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FieldSig {
    pub name: String,
    pub type_fqn: Option<String>,
    pub is_static: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeEntry {
    pub fqn: String,
    pub simple_name: String,
    pub kind: TypeKind,
    pub library: String,
    /// Keyed by (name, arity).
    pub methods: BTreeMap<(String, usize), MethodSig>,
    pub fields: BTreeMap<String, FieldSig>,
    /// Direct `extends` edges that resolve inside the knowledge base.
    pub extends: BTreeSet<String>,
    /// Direct `implements` edges that resolve inside the knowledge base.
    pub implements: BTreeSet<String>,
    /// Supertypes deliberately left out of the knowledge base.
    pub external_supers: BTreeSet<String>,
}

impl TypeEntry {
    pub fn new(fqn: &str, kind: TypeKind, library: &str) -> Self {
        TypeEntry {
            fqn: fqn.to_string(),
            simple_name: simple_name_of(fqn).to_string(),
            kind,
            library: library.to_string(),
            methods: BTreeMap::new(),
            fields: BTreeMap::new(),
            extends: BTreeSet::new(),
            implements: BTreeSet::new(),
            external_supers: BTreeSet::new(),
        }
    }

    /// All in-KB direct supertypes (extends and implements).
    pub fn supertypes(&self) -> impl Iterator<Item = &String> {
        self.extends.iter().chain(self.implements.iter())
    }

    pub fn method(&self, name: &str, arity: usize) -> Option<&MethodSig> {
        self.methods.get(&(name.to_string(), arity))
    }
}

/// Final dot-separated segment of a qualified name.
pub fn simple_name_of(fqn: &str) -> &str {
    fqn.rsplit('.').next().unwrap_or(fqn)
}

/// One item of a type's syntax knowledge.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KnowledgeItem {
    Type(String),
    Method { owner: String, name: String, arity: usize },
    Field { owner: String, name: String },
}

/// Set of candidate class/interface types used to reduce a knowledge base.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CanTypeSet {
    pub fqns: BTreeSet<String>,
}

impl CanTypeSet {
    pub fn len(&self) -> usize {
        self.fqns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fqns.is_empty()
    }

    pub fn contains(&self, fqn: &str) -> bool {
        self.fqns.contains(fqn)
    }
}

impl FromIterator<String> for CanTypeSet {
    fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        CanTypeSet {
            fqns: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeBase {
    entries: BTreeMap<String, TypeEntry>,
    by_simple_name: BTreeMap<String, BTreeSet<String>>,
}

impl KnowledgeBase {
    /// Builds a knowledge base from already validated entries.
    pub fn from_entries(entries: impl IntoIterator<Item = TypeEntry>) -> Self {
        let entries: BTreeMap<String, TypeEntry> = entries.into_iter().map(|e| (e.fqn.clone(), e)).collect();
        let by_simple_name = build_index(&entries);
        KnowledgeBase {
            entries,
            by_simple_name,
        }
    }

    pub fn parse(text: &str) -> Result<Self, KbError> {
        parse_kb(text)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, fqn: &str) -> Option<&TypeEntry> {
        self.entries.get(fqn)
    }

    pub fn contains(&self, fqn: &str) -> bool {
        self.entries.contains_key(fqn)
    }

    pub fn entries(&self) -> impl Iterator<Item = &TypeEntry> {
        self.entries.values()
    }

    pub fn fqns(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn simple_name_index(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.by_simple_name
    }

    pub fn has_simple_name(&self, simple_name: &str) -> bool {
        self.by_simple_name.contains_key(simple_name)
    }

    pub fn method_count(&self) -> usize {
        self.entries.values().map(|e| e.methods.len()).sum()
    }

    pub fn field_count(&self) -> usize {
        self.entries.values().map(|e| e.fields.len()).sum()
    }

    pub fn edge_count(&self) -> usize {
        self.entries.values().map(|e| e.supertypes().count()).sum()
    }

    /// Checks that the simple-name index is exactly the inverse grouping of
    /// the entries.
    pub fn index_is_consistent(&self) -> bool {
        build_index(&self.entries) == self.by_simple_name
    }

    /// The type and all of its transitive in-KB supertypes, in BFS order
    /// starting from `fqn`. Cycles are tolerated.
    pub fn supertype_closure(&self, fqn: &str) -> Result<Vec<&TypeEntry>, KbError> {
        let start = self
            .entries
            .get(fqn)
            .ok_or_else(|| KbError::UnknownType(fqn.to_string()))?;
        let mut seen = BTreeSet::new();
        let mut order = Vec::new();
        let mut queue = std::collections::VecDeque::new();
        seen.insert(start.fqn.as_str());
        queue.push_back(start);
        while let Some(entry) = queue.pop_front() {
            order.push(entry);
            for sup in entry.supertypes() {
                if let Some(next) = self.entries.get(sup) {
                    if seen.insert(next.fqn.as_str()) {
                        queue.push_back(next);
                    }
                }
            }
        }
        Ok(order)
    }

    /// True when `sub` is `sup` or transitively extends/implements it.
    pub fn is_subtype(&self, sub: &str, sup: &str) -> bool {
        match self.supertype_closure(sub) {
            Ok(closure) => closure.iter().any(|e| e.fqn == sup),
            Err(_) => false,
        }
    }

    /// Looks up a method by (name, arity) on the type or any supertype.
    /// The nearest declaration wins.
    pub fn find_method(&self, fqn: &str, name: &str, arity: usize) -> Option<&MethodSig> {
        let closure = self.supertype_closure(fqn).ok()?;
        closure.into_iter().find_map(|e| e.method(name, arity))
    }

    pub fn find_field(&self, fqn: &str, name: &str) -> Option<&FieldSig> {
        let closure = self.supertype_closure(fqn).ok()?;
        closure.into_iter().find_map(|e| e.fields.get(name))
    }

    /// Serializes to the canonical text format. Loading the output yields an
    /// equal knowledge base.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in self.entries.values() {
            out.push_str(&format!("type {} {} lib={}", e.fqn, e.kind.as_str(), e.library));
            push_list(&mut out, "extends", &e.extends);
            push_list(&mut out, "implements", &e.implements);
            push_list(&mut out, "external-super", &e.external_supers);
            out.push('\n');
            for m in e.methods.values() {
                out.push_str(&format!("method {} {}/{}", e.fqn, m.name, m.arity));
                if m.is_static {
                    out.push_str(" static");
                }
                out.push_str(&format!(" returns={}", m.return_fqn.as_deref().unwrap_or("?")));
                out.push('\n');
            }
            for f in e.fields.values() {
                out.push_str(&format!("field {} {}", e.fqn, f.name));
                if f.is_static {
                    out.push_str(" static");
                }
                out.push_str(&format!(" type={}", f.type_fqn.as_deref().unwrap_or("?")));
                out.push('\n');
            }
        }
        out
    }
}

fn push_list(out: &mut String, key: &str, items: &BTreeSet<String>) {
    if !items.is_empty() {
        let joined: Vec<&str> = items.iter().map(String::as_str).collect();
        out.push_str(&format!(" {}={}", key, joined.join(",")));
    }
}

fn build_index(entries: &BTreeMap<String, TypeEntry>) -> BTreeMap<String, BTreeSet<String>> {
    let mut index: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for e in entries.values() {
        index.entry(e.simple_name.clone()).or_default().insert(e.fqn.clone());
    }
    index
}

impl fmt::Display for KnowledgeBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} types, {} methods, {} fields, {} supertype edges",
            self.len(),
            self.method_count(),
            self.field_count(),
            self.edge_count()
        )
    }
}

pub fn load_kb(path: impl AsRef<Path>) -> Result<KnowledgeBase, KbError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| KbError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_kb(&text)
}

fn valid_fqn(s: &str) -> bool {
    !s.is_empty() && s.split('.').all(|seg| !seg.is_empty())
}

fn parse_fqn_list(line: usize, raw: &str) -> Result<Vec<String>, KbError> {
    raw.split(',')
        .map(|s| {
            let s = s.trim();
            if valid_fqn(s) {
                Ok(s.to_string())
            } else {
                Err(KbError::Parse {
                    line,
                    message: format!("malformed type name `{s}`"),
                })
            }
        })
        .collect()
}

fn parse_optional_fqn(line: usize, raw: &str) -> Result<Option<String>, KbError> {
    if raw == "?" {
        Ok(None)
    } else if valid_fqn(raw) {
        Ok(Some(raw.to_string()))
    } else {
        Err(KbError::Parse {
            line,
            message: format!("malformed type name `{raw}`"),
        })
    }
}

struct PendingMember {
    line: usize,
    owner: String,
    member: Member,
}

enum Member {
    Method(MethodSig),
    Field(FieldSig),
}

fn parse_kb(text: &str) -> Result<KnowledgeBase, KbError> {
    let mut entries: BTreeMap<String, TypeEntry> = BTreeMap::new();
    let mut pending = Vec::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        let mut words = content.split_whitespace();
        let Some(head) = words.next() else { continue };
        let err = |message: String| KbError::Parse { line, message };
        match head {
            "type" => {
                let fqn = words.next().ok_or_else(|| err("missing type name".into()))?;
                if !valid_fqn(fqn) {
                    return Err(err(format!("malformed type name `{fqn}`")));
                }
                let kind = match words.next() {
                    Some("class") => TypeKind::Class,
                    Some("interface") => TypeKind::Interface,
                    Some(other) => return Err(err(format!("unknown kind `{other}`"))),
                    None => return Err(err("missing kind".into())),
                };
                let mut library = None;
                let mut entry = TypeEntry::new(fqn, kind, "");
                for attr in words {
                    let (key, value) = attr
                        .split_once('=')
                        .ok_or_else(|| err(format!("expected key=value, got `{attr}`")))?;
                    match key {
                        "lib" if !value.is_empty() => library = Some(value.to_string()),
                        "extends" => entry.extends.extend(parse_fqn_list(line, value)?),
                        "implements" => entry.implements.extend(parse_fqn_list(line, value)?),
                        "external-super" => entry.external_supers.extend(parse_fqn_list(line, value)?),
                        _ => return Err(err(format!("unknown attribute `{attr}`"))),
                    }
                }
                entry.library = library.ok_or_else(|| err("missing lib=<id>".into()))?;
                if entries.contains_key(fqn) {
                    return Err(KbError::DuplicateFqn {
                        line,
                        fqn: fqn.to_string(),
                    });
                }
                entries.insert(fqn.to_string(), entry);
            }
            "method" => {
                let owner = words.next().ok_or_else(|| err("missing owner".into()))?;
                let sig = words.next().ok_or_else(|| err("missing name/arity".into()))?;
                let (name, arity) = sig
                    .split_once('/')
                    .ok_or_else(|| err(format!("expected name/arity, got `{sig}`")))?;
                if name.is_empty() {
                    return Err(err("empty method name".into()));
                }
                let arity: usize = arity.parse().map_err(|_| err(format!("bad arity `{arity}`")))?;
                let mut is_static = false;
                let mut return_fqn = None;
                for attr in words {
                    match attr {
                        "static" => is_static = true,
                        _ => match attr.strip_prefix("returns=") {
                            Some(v) => return_fqn = parse_optional_fqn(line, v)?,
                            None => return Err(err(format!("unknown attribute `{attr}`"))),
                        },
                    }
                }
                pending.push(PendingMember {
                    line,
                    owner: owner.to_string(),
                    member: Member::Method(MethodSig {
                        name: name.to_string(),
                        arity,
                        is_static,
                        return_fqn,
                    }),
                });
            }
            "field" => {
                let owner = words.next().ok_or_else(|| err("missing owner".into()))?;
                let name = words.next().ok_or_else(|| err("missing field name".into()))?;
                let mut is_static = false;
                let mut type_fqn = None;
                for attr in words {
                    match attr {
                        "static" => is_static = true,
                        _ => match attr.strip_prefix("type=") {
                            Some(v) => type_fqn = parse_optional_fqn(line, v)?,
                            None => return Err(err(format!("unknown attribute `{attr}`"))),
                        },
                    }
                }
                pending.push(PendingMember {
                    line,
                    owner: owner.to_string(),
                    member: Member::Field(FieldSig {
                        name: name.to_string(),
                        type_fqn,
                        is_static,
                    }),
                });
            }
            other => return Err(err(format!("unknown record `{other}`"))),
        }
    }

    for PendingMember { line, owner, member } in pending {
        let entry = entries.get_mut(&owner).ok_or_else(|| KbError::UnknownOwner {
            line,
            owner: owner.clone(),
        })?;
        match member {
            Member::Method(m) => {
                let key = (m.name.clone(), m.arity);
                if entry.methods.contains_key(&key) {
                    return Err(KbError::DuplicateMethod {
                        line,
                        owner,
                        name: m.name,
                        arity: m.arity,
                    });
                }
                entry.methods.insert(key, m);
            }
            Member::Field(f) => {
                if entry.fields.contains_key(&f.name) {
                    return Err(KbError::DuplicateField {
                        line,
                        owner,
                        name: f.name,
                    });
                }
                entry.fields.insert(f.name.clone(), f);
            }
        }
    }

    for e in entries.values() {
        for sup in e.supertypes() {
            if !entries.contains_key(sup) {
                return Err(KbError::DanglingSupertype {
                    fqn: e.fqn.clone(),
                    supertype: sup.clone(),
                });
            }
        }
    }

    Ok(KnowledgeBase::from_entries(entries.into_values()))
}

/// All FQNs sharing `simple_name`, in lexicographic order.
pub fn candidates_for<'a>(kb: &'a KnowledgeBase, simple_name: &str) -> Vec<&'a str> {
    kb.by_simple_name
        .get(simple_name)
        .map(|set| set.iter().map(String::as_str).collect())
        .unwrap_or_default()
}

/// The type, its transitive supertypes, and every method and field they
/// declare.
pub fn syntax_knowledge(kb: &KnowledgeBase, ctype: &str) -> Result<BTreeSet<KnowledgeItem>, KbError> {
    let mut items = BTreeSet::new();
    for e in kb.supertype_closure(ctype)? {
        items.insert(KnowledgeItem::Type(e.fqn.clone()));
        for (name, arity) in e.methods.keys() {
            items.insert(KnowledgeItem::Method {
                owner: e.fqn.clone(),
                name: name.clone(),
                arity: *arity,
            });
        }
        for name in e.fields.keys() {
            items.insert(KnowledgeItem::Field {
                owner: e.fqn.clone(),
                name: name.clone(),
            });
        }
    }
    Ok(items)
}

/// Union of every element's statistical top-k list and every
/// constraint-inferred type.
pub fn collect_candidate_types<K: Ord>(
    stat_topk: &BTreeMap<K, Vec<String>>,
    constraint_typed: &BTreeMap<K, String>,
    elements: &[K],
) -> CanTypeSet {
    let mut fqns = BTreeSet::new();
    for e in elements {
        if let Some(list) = stat_topk.get(e) {
            fqns.extend(list.iter().cloned());
        }
        if let Some(t) = constraint_typed.get(e) {
            fqns.insert(t.clone());
        }
    }
    CanTypeSet { fqns }
}

/// Rebuilds a knowledge base from the syntax knowledge of each candidate
/// type. Entries are copied unchanged; since the closure is transitive,
/// every retained supertype edge still resolves.
pub fn reduce_kb(kb: &KnowledgeBase, cantypes: &CanTypeSet) -> Result<KnowledgeBase, KbError> {
    let mut keep: BTreeMap<String, TypeEntry> = BTreeMap::new();
    for ctype in &cantypes.fqns {
        for e in kb.supertype_closure(ctype)? {
            if !keep.contains_key(&e.fqn) {
                keep.insert(e.fqn.clone(), e.clone());
            }
        }
    }
    Ok(KnowledgeBase::from_entries(keep.into_values()))
}
