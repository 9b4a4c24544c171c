//! Lenient lexing of Java snippets, class/interface element identification,
//! and context augmentation.
//!
//! The lexer never fails: anything it does not recognise becomes a
//! one-character punctuation token, and the concatenation of all lexemes is
//! always the original text.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::KnowledgeBase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenClass {
    Identifier,
    Keyword,
    Literal,
    Punctuation,
    Comment,
    Whitespace,
}

impl TokenClass {
    /// Whitespace and comments carry no context.
    pub fn is_trivia(self) -> bool {
        matches!(self, TokenClass::Whitespace | TokenClass::Comment)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub lexeme: String,
    pub class: TokenClass,
    /// 1-based line of the first character.
    pub line: u32,
    /// 1-based column (in chars) of the first character.
    pub column: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snippet {
    pub raw: String,
    pub tokens: Vec<Token>,
}

impl Snippet {
    pub fn detokenize(&self) -> String {
        self.tokens.iter().map(|t| t.lexeme.as_str()).collect()
    }

    /// Indices of tokens that are neither whitespace nor comments.
    pub fn significant(&self) -> Vec<usize> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.class.is_trivia())
            .map(|(i, _)| i)
            .collect()
    }
}

pub const JAVA_KEYWORDS: &[&str] = &[
    "abstract",
    "assert",
    "boolean",
    "break",
    "byte",
    "case",
    "catch",
    "char",
    "class",
    "const",
    "continue",
    "default",
    "do",
    "double",
    "else",
    "enum",
    "extends",
    "final",
    "finally",
    "float",
    "for",
    "goto",
    "if",
    "implements",
    "import",
    "instanceof",
    "int",
    "interface",
    "long",
    "native",
    "new",
    "package",
    "private",
    "protected",
    "public",
    "return",
    "short",
    "static",
    "strictfp",
    "super",
    "switch",
    "synchronized",
    "this",
    "throw",
    "throws",
    "transient",
    "try",
    "void",
    "volatile",
    "while",
    "var",
    "true",
    "false",
    "null",
];

fn is_keyword(word: &str) -> bool {
    JAVA_KEYWORDS.contains(&word)
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_' || c == '$'
}

fn is_ident_continue(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

pub fn tokenize(text: &str) -> Snippet {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let byte_at = |i: usize| chars.get(i).map(|&(b, _)| b).unwrap_or(text.len());
    let mut tokens = Vec::new();
    let mut i = 0;
    let mut line = 1u32;
    let mut column = 1u32;

    while i < chars.len() {
        let c = chars[i].1;
        let next = chars.get(i + 1).map(|&(_, c)| c);
        let start = i;
        let class = if c.is_whitespace() {
            while i < chars.len() && chars[i].1.is_whitespace() {
                i += 1;
            }
            TokenClass::Whitespace
        } else if c == '/' && next == Some('/') {
            while i < chars.len() && chars[i].1 != '\n' {
                i += 1;
            }
            TokenClass::Comment
        } else if c == '/' && next == Some('*') {
            i += 2;
            while i < chars.len() && !(chars[i].1 == '*' && chars.get(i + 1).map(|p| p.1) == Some('/')) {
                i += 1;
            }
            i = (i + 2).min(chars.len());
            TokenClass::Comment
        } else if c == '"' || c == '\'' {
            // Unterminated literals stop at end of line.
            i += 1;
            while i < chars.len() {
                match chars[i].1 {
                    '\\' if i + 1 < chars.len() && chars[i + 1].1 != '\n' => i += 2,
                    '\n' => break,
                    q if q == c => {
                        i += 1;
                        break;
                    }
                    _ => i += 1,
                }
            }
            TokenClass::Literal
        } else if c.is_ascii_digit() || (c == '.' && next.is_some_and(|n| n.is_ascii_digit())) {
            i += 1;
            while i < chars.len() {
                let d = chars[i].1;
                if d.is_alphanumeric() || d == '_' || d == '.' {
                    i += 1;
                } else {
                    break;
                }
            }
            TokenClass::Literal
        } else if is_ident_start(c) {
            while i < chars.len() && is_ident_continue(chars[i].1) {
                i += 1;
            }
            let word = &text[byte_at(start)..byte_at(i)];
            if is_keyword(word) {
                TokenClass::Keyword
            } else {
                TokenClass::Identifier
            }
        } else {
            i += 1;
            TokenClass::Punctuation
        };
        let lexeme = &text[byte_at(start)..byte_at(i)];
        tokens.push(Token {
            lexeme: lexeme.to_string(),
            class,
            line,
            column,
        });
        for ch in lexeme.chars() {
            if ch == '\n' {
                line += 1;
                column = 1;
            } else {
                column += 1;
            }
        }
    }

    Snippet {
        raw: text.to_string(),
        tokens,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntacticRole {
    ObjectCreation,
    StaticReceiver,
    DeclaredType,
    ExtendsClause,
    ImplementsClause,
    Annotation,
    Cast,
    Other,
}

/// One class/interface occurrence in a snippet.
///
/// Ordering is by token position, so maps keyed by elements iterate in
/// source order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ApiElement {
    pub token_index: usize,
    pub simple_name: String,
    pub line: u32,
    pub occurrence: u32,
    pub role: SyntacticRole,
}

impl ApiElement {
    pub fn key(&self) -> String {
        element_key(self)
    }
}

impl fmt::Display for ApiElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{},{}]", self.simple_name, self.line, self.occurrence)
    }
}

pub fn element_key(e: &ApiElement) -> String {
    e.to_string()
}

/// Parses `Name[line,occ]`.
pub fn parse_element_key(key: &str) -> Option<(String, u32, u32)> {
    let (name, rest) = key.split_once('[')?;
    let inner = rest.strip_suffix(']')?;
    let (line, occ) = inner.split_once(',')?;
    let name = name.trim();
    if name.is_empty() {
        return None;
    }
    Some((name.to_string(), line.trim().parse().ok()?, occ.trim().parse().ok()?))
}

/// Primitive wrappers and other names never reported as elements.
pub const BOXED_EXCLUSIONS: &[&str] = &[
    "int",
    "Integer",
    "long",
    "Long",
    "double",
    "Double",
    "boolean",
    "Boolean",
    "char",
    "Character",
    "byte",
    "Byte",
    "short",
    "Short",
    "float",
    "Float",
    "void",
    "Void",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentifyOptions {
    pub exclude_string: bool,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        IdentifyOptions { exclude_string: true }
    }
}

impl IdentifyOptions {
    pub fn is_excluded(&self, name: &str) -> bool {
        BOXED_EXCLUSIONS.contains(&name) || (self.exclude_string && name == "String")
    }
}

const MODIFIERS: &[&str] = &[
    "public",
    "private",
    "protected",
    "static",
    "final",
    "abstract",
    "synchronized",
    "native",
    "transient",
    "volatile",
    "strictfp",
    "default",
];

pub(crate) fn is_modifier(word: &str) -> bool {
    MODIFIERS.contains(&word)
}

/// Significant-token view used by the heuristic passes.
pub(crate) struct SigView<'a> {
    pub snippet: &'a Snippet,
    pub idx: Vec<usize>,
}

impl<'a> SigView<'a> {
    pub fn new(snippet: &'a Snippet) -> Self {
        SigView {
            snippet,
            idx: snippet.significant(),
        }
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn tok(&self, s: usize) -> Option<&'a Token> {
        self.idx.get(s).map(|&i| &self.snippet.tokens[i])
    }

    pub fn text(&self, s: usize) -> &'a str {
        self.tok(s).map(|t| t.lexeme.as_str()).unwrap_or("")
    }

    pub fn is(&self, s: usize, text: &str) -> bool {
        self.tok(s).is_some_and(|t| t.lexeme == text)
    }

    pub fn prev_text(&self, s: usize) -> &'a str {
        if s == 0 {
            ""
        } else {
            self.text(s - 1)
        }
    }

    pub fn is_ident(&self, s: usize) -> bool {
        self.tok(s).is_some_and(|t| t.class == TokenClass::Identifier)
    }

    /// Position just past a balanced `<...>` starting at `s`, if any.
    pub fn skip_generics(&self, s: usize) -> Option<usize> {
        if !self.is(s, "<") {
            return None;
        }
        let mut depth = 0i32;
        let mut j = s;
        while j < self.len() {
            match self.text(j) {
                "<" => depth += 1,
                ">" => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(j + 1);
                    }
                }
                ";" | "{" | "}" | "(" | ")" | "=" => return None,
                _ => {}
            }
            j += 1;
        }
        None
    }

    /// Position just past any `[]` pairs starting at `s`.
    pub fn skip_array_dims(&self, mut s: usize) -> usize {
        while self.is(s, "[") && self.is(s + 1, "]") {
            s += 2;
        }
        s
    }

    /// Position after the type suffix (generics, array dims) at `s`.
    pub fn after_type_suffix(&self, s: usize) -> usize {
        let s = self.skip_generics(s).unwrap_or(s);
        self.skip_array_dims(s)
    }

    /// Position of the `)` matching the `(` at `s`.
    pub fn matching_paren(&self, s: usize) -> Option<usize> {
        self.matching(s, "(", ")")
    }

    pub fn matching(&self, s: usize, open: &str, close: &str) -> Option<usize> {
        if !self.is(s, open) {
            return None;
        }
        let mut depth = 0i32;
        for j in s..self.len() {
            let t = self.text(j);
            if t == open {
                depth += 1;
            } else if t == close {
                depth -= 1;
                if depth == 0 {
                    return Some(j);
                }
            }
        }
        None
    }
}

/// Names declared as classes, interfaces, or enums inside the snippet.
pub(crate) fn local_type_names(view: &SigView<'_>) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    for s in 0..view.len() {
        if matches!(view.text(s), "class" | "interface" | "enum") && view.is_ident(s + 1) {
            names.insert(view.text(s + 1).to_string());
        }
    }
    names
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Clause {
    None,
    Extends,
    Implements,
}

/// Identifies class/interface occurrences by position heuristics.
pub fn identify_api_elements(
    snippet: &Snippet,
    kb: Option<&KnowledgeBase>,
    options: &IdentifyOptions,
) -> Vec<ApiElement> {
    let view = SigView::new(snippet);
    let locals = local_type_names(&view);
    let mut clause = Clause::None;
    let mut found: Vec<(usize, SyntacticRole)> = Vec::new();

    for s in 0..view.len() {
        let tok = view.tok(s).expect("in range");
        match tok.lexeme.as_str() {
            "extends" => {
                clause = Clause::Extends;
                continue;
            }
            "implements" => {
                clause = Clause::Implements;
                continue;
            }
            "{" | ";" | "(" | ")" => clause = Clause::None,
            _ => {}
        }
        if tok.class != TokenClass::Identifier {
            continue;
        }
        let name = tok.lexeme.as_str();
        if !name.chars().next().is_some_and(char::is_uppercase) || options.is_excluded(name) {
            continue;
        }
        if locals.contains(name) {
            continue;
        }
        let prev = view.prev_text(s);
        if prev == "." || matches!(prev, "class" | "interface" | "enum") {
            continue;
        }
        let in_clause = clause != Clause::None && matches!(prev, "extends" | "implements" | ",");
        let role = if in_clause {
            if clause == Clause::Extends {
                SyntacticRole::ExtendsClause
            } else {
                SyntacticRole::ImplementsClause
            }
        } else if prev == "new" {
            SyntacticRole::ObjectCreation
        } else if prev == "@" {
            SyntacticRole::Annotation
        } else if view.is(s + 1, ".") && view.is_ident(s + 2) {
            SyntacticRole::StaticReceiver
        } else if prev == "(" && view.is(s + 1, ")") && casts_onto(&view, s + 2) {
            SyntacticRole::Cast
        } else if (view.is_ident(view.after_type_suffix(s + 1))
            && declaration_follows(&view, view.after_type_suffix(s + 1)))
            || (matches!(prev, "<" | ",") && generic_argument(&view, s))
        {
            SyntacticRole::DeclaredType
        } else if kb.is_some_and(|kb| kb.has_simple_name(name)) {
            SyntacticRole::Other
        } else {
            continue;
        };
        found.push((s, role));
    }

    let mut counters: HashMap<(String, u32), u32> = HashMap::new();
    found
        .into_iter()
        .map(|(s, role)| {
            let tok = view.tok(s).expect("in range");
            let counter = counters.entry((tok.lexeme.clone(), tok.line)).or_insert(0);
            *counter += 1;
            ApiElement {
                token_index: view.idx[s],
                simple_name: tok.lexeme.clone(),
                line: tok.line,
                occurrence: *counter,
                role,
            }
        })
        .collect()
}

fn casts_onto(view: &SigView<'_>, s: usize) -> bool {
    view.tok(s).is_some_and(|t| {
        matches!(t.class, TokenClass::Identifier | TokenClass::Literal)
            || matches!(t.lexeme.as_str(), "(" | "new" | "this")
    })
}

/// `Type name` is a declaration when the name is followed by something that
/// ends or continues a declarator.
fn declaration_follows(view: &SigView<'_>, s: usize) -> bool {
    matches!(view.text(s + 1), "=" | ";" | "," | ")" | ":" | "(" | "[")
}

fn generic_argument(view: &SigView<'_>, s: usize) -> bool {
    let after = view.after_type_suffix(s + 1);
    matches!(view.text(after), ">" | ",")
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AugmentError {
    #[error("token {0} is not an identified API element")]
    NotAnElement(usize),
}

/// A snippet with API-element tokens replaced by inferred types. Token
/// positions, classes and lines are those of the source snippet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedSnippet {
    pub tokens: Vec<String>,
    pub classes: Vec<TokenClass>,
    pub lines: Vec<u32>,
    pub substitutions: BTreeMap<usize, String>,
}

impl AugmentedSnippet {
    pub fn unaugmented(snippet: &Snippet) -> Self {
        AugmentedSnippet {
            tokens: snippet.tokens.iter().map(|t| t.lexeme.clone()).collect(),
            classes: snippet.tokens.iter().map(|t| t.class).collect(),
            lines: snippet.tokens.iter().map(|t| t.line).collect(),
            substitutions: BTreeMap::new(),
        }
    }

    pub fn render(&self) -> String {
        self.tokens.concat()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Replaces each typed element's token with its type, leaving every other
/// token untouched.
pub fn augment(
    snippet: &Snippet,
    elements: &[ApiElement],
    typed: &BTreeMap<ApiElement, String>,
) -> Result<AugmentedSnippet, AugmentError> {
    let mut aug = AugmentedSnippet::unaugmented(snippet);
    for (element, fqn) in typed {
        if !elements.contains(element) {
            return Err(AugmentError::NotAnElement(element.token_index));
        }
        aug.tokens[element.token_index] = fqn.clone();
        aug.substitutions.insert(element.token_index, fqn.clone());
    }
    Ok(aug)
}
