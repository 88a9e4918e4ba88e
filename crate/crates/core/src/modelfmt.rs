//! The `.fproto` protocol description format.
//!
//! ```text
//! model "Alternating bit"
//! note "free text"
//!
//! channel AtoB capacity 1 messages {DATA0, DATA1}
//! channel D[2] capacity 1 messages {X}          # declares D_0 and D_1
//!
//! process Sender {
//!     var bit : {0, 1} = 0
//!     states {Send, Wait}
//!     init Send
//!     Send --AtoB!DATA0--> Wait when bit == 0
//!     Wait --BtoA?ACK0--> Send when bit == 0 do bit := 1
//!     Wait --tau--> Send
//! }
//!
//! property live := G F Sender.Send
//! ```
//!
//! Actions are `tau`, `timeout`, `c!m` (send), `c?m` (receive) and `c?<m>`
//! (peek). A `timeout` move is only enabled when no other move is.
//! Variables are expanded into the state space: a control state `Wait` with
//! `bit = 1` becomes `Wait{bit=1}`, labeled `Sender.Wait` and `Sender.bit==1`.
//! Only valuations reachable from the initial one are kept.
//!
//! Property atoms are `P.State`, `P.var==v`, `P.x==Q.y` (expanded into a
//! disjunction over common values), `empty(c)` and `len(c)==n`. A property
//! runs to the end of its line.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::buchi::{find_accepting_run, ltl_to_buchi, SearchOptions, SearchOutcome, SystemLasso};
use crate::kernel::{Action, ChannelDef, Component, KernelError, Message, ProcessDef, System, Transition};
use crate::ltl::{parse_formula, Formula};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiagnosticKind {
    SyntaxError,
    UnresolvedReference,
    DuplicateId,
    DomainMismatch,
}

impl fmt::Display for DiagnosticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiagnosticKind::SyntaxError => "syntax error",
            DiagnosticKind::UnresolvedReference => "unresolved reference",
            DiagnosticKind::DuplicateId => "duplicate id",
            DiagnosticKind::DomainMismatch => "domain mismatch",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}: {}", self.line, self.column, self.kind, self.message)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{}", .diagnostics.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"))]
pub struct ParseError {
    pub diagnostics: Vec<Diagnostic>,
}

/// A variable declaration `var x : {a, b} = a`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VarDecl {
    pub name: String,
    pub domain: Vec<String>,
    pub init: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Condition {
    pub var: String,
    pub equal: bool,
    pub value: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransitionDecl {
    pub source: String,
    pub action: Action,
    pub target: String,
    pub guard: Vec<Condition>,
    pub assign: Vec<(String, String)>,
}

/// A process as written, before variable expansion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProcessDecl {
    pub id: String,
    pub vars: Vec<VarDecl>,
    pub states: Vec<String>,
    pub init: String,
    pub transitions: Vec<TransitionDecl>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Property {
    pub name: String,
    pub formula: Formula,
}

/// A parsed and resolved model.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ModelDocument {
    pub title: Option<String>,
    pub notes: Vec<String>,
    pub channels: Vec<ChannelDef>,
    pub declarations: Vec<ProcessDecl>,
    /// Expanded processes, one per declaration.
    pub processes: Vec<ProcessDef>,
    pub properties: Vec<Property>,
}

impl ModelDocument {
    pub fn property(&self, name: &str) -> Option<&Property> {
        self.properties.iter().find(|p| p.name == name)
    }

    pub fn channel(&self, id: &str) -> Option<&ChannelDef> {
        self.channels.iter().find(|c| c.id == id)
    }

    /// The gadget-free composition of the model's processes.
    pub fn system(&self) -> Result<System, KernelError> {
        System::compose(self.channels.clone(), self.processes.iter().cloned().map(Component::base).collect())
    }
}

// ---------------------------------------------------------------------------
// Lexing

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Str(String),
    Arrow(String),
    Formula(String),
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Colon,
    Assign,
    Eq,
    EqEq,
    NotEq,
    AndAnd,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "'{s}'"),
            Tok::Str(_) => f.write_str("string"),
            Tok::Arrow(a) => write!(f, "'--{a}-->'"),
            Tok::Formula(_) => f.write_str("formula"),
            Tok::LBrace => f.write_str("'{'"),
            Tok::RBrace => f.write_str("'}'"),
            Tok::LBracket => f.write_str("'['"),
            Tok::RBracket => f.write_str("']'"),
            Tok::Comma => f.write_str("','"),
            Tok::Semi => f.write_str("';'"),
            Tok::Colon => f.write_str("':'"),
            Tok::Assign => f.write_str("':='"),
            Tok::Eq => f.write_str("'='"),
            Tok::EqEq => f.write_str("'=='"),
            Tok::NotEq => f.write_str("'!='"),
            Tok::AndAnd => f.write_str("'&&'"),
        }
    }
}

struct Lines {
    starts: Vec<usize>,
}

impl Lines {
    fn new(text: &str) -> Self {
        let mut starts = vec![0];
        starts.extend(text.match_indices('\n').map(|(i, _)| i + 1));
        Lines { starts }
    }

    fn locate(&self, text: &str, offset: usize) -> (usize, usize) {
        let line = self.starts.partition_point(|&s| s <= offset) - 1;
        let start = self.starts[line];
        let column = text.get(start..offset).map(|s| s.chars().count()).unwrap_or(offset - start) + 1;
        (line + 1, column)
    }
}

type Spanned = (usize, Tok);

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn lex(text: &str) -> Result<Vec<Spanned>, (usize, String)> {
    let mut out: Vec<Spanned> = Vec::new();
    let mut it = text.char_indices().peekable();
    while let Some(&(i, c)) = it.peek() {
        let rest = &text[i..];
        if c.is_whitespace() {
            it.next();
            continue;
        }
        if c == '#' || rest.starts_with("//") {
            while it.peek().is_some_and(|&(_, c)| c != '\n') {
                it.next();
            }
            continue;
        }
        let advance = |n: usize, it: &mut std::iter::Peekable<std::str::CharIndices>| {
            while it.peek().is_some_and(|&(j, _)| j < i + n) {
                it.next();
            }
        };
        if rest.starts_with("--") {
            let line_end = rest.find('\n').unwrap_or(rest.len());
            let Some(close) = rest[2..line_end].find("-->") else {
                return Err((i, "unterminated transition arrow, expected '-->'".into()));
            };
            out.push((i, Tok::Arrow(rest[2..2 + close].trim().to_string())));
            advance(2 + close + 3, &mut it);
            continue;
        }
        if rest.starts_with(":=") {
            out.push((i, Tok::Assign));
            advance(2, &mut it);
            // `property NAME :=` takes the rest of the line as a formula.
            let n = out.len();
            if n >= 3 && out[n - 3].1 == Tok::Ident("property".into()) {
                let line_end = text[i + 2..].find('\n').map(|e| i + 2 + e).unwrap_or(text.len());
                let raw = &text[i + 2..line_end];
                let lead = raw.len() - raw.trim_start().len();
                let body = raw.trim();
                let body = body.strip_suffix(';').unwrap_or(body).trim_end();
                out.push((i + 2 + lead, Tok::Formula(body.to_string())));
                advance(line_end - i, &mut it);
            }
            continue;
        }
        let two = [("==", Tok::EqEq), ("!=", Tok::NotEq), ("&&", Tok::AndAnd)];
        if let Some((s, t)) = two.iter().find(|(s, _)| rest.starts_with(s)) {
            out.push((i, t.clone()));
            advance(s.len(), &mut it);
            continue;
        }
        let single = match c {
            '{' => Some(Tok::LBrace),
            '}' => Some(Tok::RBrace),
            '[' => Some(Tok::LBracket),
            ']' => Some(Tok::RBracket),
            ',' => Some(Tok::Comma),
            ';' => Some(Tok::Semi),
            ':' => Some(Tok::Colon),
            '=' => Some(Tok::Eq),
            _ => None,
        };
        if let Some(t) = single {
            out.push((i, t));
            it.next();
            continue;
        }
        if c == '"' {
            it.next();
            let mut s = String::new();
            loop {
                match it.next() {
                    Some((_, '"')) => break,
                    Some((_, '\\')) => match it.next() {
                        Some((_, 'n')) => s.push('\n'),
                        Some((_, ch)) => s.push(ch),
                        None => return Err((i, "unterminated string".into())),
                    },
                    Some((_, '\n')) | None => return Err((i, "unterminated string".into())),
                    Some((_, ch)) => s.push(ch),
                }
            }
            out.push((i, Tok::Str(s)));
            continue;
        }
        if is_ident_char(c) {
            let mut end = i;
            while let Some(&(j, ch)) = it.peek() {
                if !is_ident_char(ch) {
                    break;
                }
                end = j + ch.len_utf8();
                it.next();
            }
            out.push((i, Tok::Ident(text[i..end].to_string())));
            continue;
        }
        return Err((i, format!("unexpected character {c:?}")));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parsing

struct Parser<'a> {
    text: &'a str,
    lines: Lines,
    toks: Vec<Spanned>,
    pos: usize,
}

type PResult<T> = Result<T, Diagnostic>;

impl<'a> Parser<'a> {
    fn diag(&self, kind: DiagnosticKind, offset: usize, message: impl Into<String>) -> Diagnostic {
        let (line, column) = self.lines.locate(self.text, offset);
        Diagnostic { kind, line, column, message: message.into() }
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|t| t.0).unwrap_or(self.text.len())
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn syntax<T>(&self, message: impl Into<String>) -> PResult<T> {
        Err(self.diag(DiagnosticKind::SyntaxError, self.offset(), message))
    }

    fn unexpected<T>(&self, wanted: &str) -> PResult<T> {
        match self.peek() {
            Some(t) => self.syntax(format!("expected {wanted}, found {t}")),
            None => self.syntax(format!("expected {wanted}, found end of input")),
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok) -> PResult<()> {
        if self.eat(&tok) {
            Ok(())
        } else {
            self.unexpected(&tok.to_string())
        }
    }

    fn keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn ident(&mut self, what: &str) -> PResult<(usize, String)> {
        let at = self.offset();
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok((at, s))
            }
            _ => self.unexpected(what),
        }
    }

    fn number(&mut self, what: &str) -> PResult<usize> {
        let (at, s) = self.ident(what)?;
        s.parse().map_err(|_| self.diag(DiagnosticKind::SyntaxError, at, format!("expected {what}, found '{s}'")))
    }

    fn string(&mut self) -> PResult<String> {
        match self.peek() {
            Some(Tok::Str(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.unexpected("a string"),
        }
    }

    fn ident_set(&mut self, what: &str) -> PResult<Vec<(usize, String)>> {
        self.expect(Tok::LBrace)?;
        let mut out = Vec::new();
        if self.eat(&Tok::RBrace) {
            return Ok(out);
        }
        loop {
            out.push(self.ident(what)?);
            if self.eat(&Tok::RBrace) {
                return Ok(out);
            }
            self.expect(Tok::Comma)?;
        }
    }
}

struct RawChannel {
    at: usize,
    name: String,
    count: Option<usize>,
    capacity: usize,
    messages: Vec<(usize, String)>,
}

struct RawTransition {
    at: usize,
    source: (usize, String),
    action: (usize, String),
    target: (usize, String),
    guard: Vec<(usize, Condition)>,
    assign: Vec<(usize, String, String)>,
}

struct RawProcess {
    at: usize,
    id: String,
    vars: Vec<(usize, VarDecl)>,
    states: Vec<(usize, String)>,
    init: Option<(usize, String)>,
    transitions: Vec<RawTransition>,
}

struct RawProperty {
    at: usize,
    name: String,
    formula_at: usize,
    formula: String,
}

#[derive(Default)]
struct Raw {
    title: Option<String>,
    notes: Vec<String>,
    channels: Vec<RawChannel>,
    processes: Vec<RawProcess>,
    properties: Vec<RawProperty>,
}

impl Parser<'_> {
    fn document(&mut self) -> PResult<Raw> {
        let mut raw = Raw::default();
        while self.pos < self.toks.len() {
            if self.eat(&Tok::Semi) {
                continue;
            }
            let (at, kw) = self.ident("a declaration")?;
            match kw.as_str() {
                "model" => raw.title = Some(self.string()?),
                "note" => raw.notes.push(self.string()?),
                "channel" => raw.channels.push(self.channel(at)?),
                "process" => raw.processes.push(self.process(at)?),
                "property" => {
                    let (_, name) = self.ident("a property name")?;
                    self.expect(Tok::Assign)?;
                    let formula_at = self.offset();
                    match self.toks.get(self.pos).map(|t| t.1.clone()) {
                        Some(Tok::Formula(f)) if !f.is_empty() => {
                            self.pos += 1;
                            raw.properties.push(RawProperty { at, name, formula_at, formula: f });
                        }
                        _ => return self.syntax("expected a formula after ':='"),
                    }
                }
                other => {
                    return Err(self.diag(
                        DiagnosticKind::SyntaxError,
                        at,
                        format!("expected 'model', 'note', 'channel', 'process' or 'property', found '{other}'"),
                    ))
                }
            }
        }
        Ok(raw)
    }

    fn channel(&mut self, at: usize) -> PResult<RawChannel> {
        let (_, name) = self.ident("a channel name")?;
        let count = if self.eat(&Tok::LBracket) {
            let n = self.number("a channel count")?;
            self.expect(Tok::RBracket)?;
            Some(n)
        } else {
            None
        };
        if !self.keyword("capacity") {
            return self.unexpected("'capacity'");
        }
        self.pos += 1;
        let capacity = self.number("a capacity")?;
        if !self.keyword("messages") {
            return self.unexpected("'messages'");
        }
        self.pos += 1;
        let messages = self.ident_set("a message name")?;
        Ok(RawChannel { at, name, count, capacity, messages })
    }

    fn process(&mut self, at: usize) -> PResult<RawProcess> {
        let (_, id) = self.ident("a process name")?;
        self.expect(Tok::LBrace)?;
        let mut p = RawProcess { at, id, vars: Vec::new(), states: Vec::new(), init: None, transitions: Vec::new() };
        loop {
            if self.eat(&Tok::RBrace) {
                return Ok(p);
            }
            if self.eat(&Tok::Semi) {
                continue;
            }
            let (at, word) = self.ident("a process item or '}'")?;
            match word.as_str() {
                "var" if matches!(self.peek(), Some(Tok::Ident(_))) => {
                    let (_, name) = self.ident("a variable name")?;
                    self.expect(Tok::Colon)?;
                    let domain = self.ident_set("a value")?.into_iter().map(|(_, v)| v).collect();
                    self.expect(Tok::Eq)?;
                    let (_, init) = self.ident("an initial value")?;
                    p.vars.push((at, VarDecl { name, domain, init }));
                }
                "states" if self.peek() == Some(&Tok::LBrace) => p.states.extend(self.ident_set("a state name")?),
                "init" if matches!(self.peek(), Some(Tok::Ident(_))) => p.init = Some(self.ident("a state name")?),
                _ => {
                    let action_at = self.offset();
                    let action = match self.peek() {
                        Some(Tok::Arrow(a)) => a.clone(),
                        _ => return self.unexpected("'--action-->'"),
                    };
                    self.pos += 1;
                    let target = self.ident("a target state")?;
                    let mut t = RawTransition { at, source: (at, word), action: (action_at, action), target, guard: Vec::new(), assign: Vec::new() };
                    if self.keyword("when") {
                        self.pos += 1;
                        loop {
                            let (cat, var) = self.ident("a variable")?;
                            let equal = if self.eat(&Tok::EqEq) {
                                true
                            } else if self.eat(&Tok::NotEq) {
                                false
                            } else {
                                return self.unexpected("'==' or '!='");
                            };
                            let (_, value) = self.ident("a value")?;
                            t.guard.push((cat, Condition { var, equal, value }));
                            if !self.eat(&Tok::AndAnd) {
                                break;
                            }
                        }
                    }
                    if self.keyword("do") {
                        self.pos += 1;
                        loop {
                            let (aat, var) = self.ident("a variable")?;
                            self.expect(Tok::Assign)?;
                            let (_, value) = self.ident("a value")?;
                            t.assign.push((aat, var, value));
                            if !self.eat(&Tok::Comma) {
                                break;
                            }
                        }
                    }
                    p.transitions.push(t);
                }
            }
        }
    }
}

fn parse_action(text: &str) -> Result<Action, String> {
    match text {
        "tau" => return Ok(Action::Internal),
        "timeout" => return Ok(Action::Timeout),
        _ => {}
    }
    let valid = |s: &str| !s.is_empty() && s.chars().all(is_ident_char);
    if let Some((c, m)) = text.split_once('!') {
        if valid(c) && valid(m) {
            return Ok(Action::send(c, m));
        }
    } else if let Some((c, rest)) = text.split_once('?') {
        if let Some(m) = rest.strip_prefix('<').and_then(|r| r.strip_suffix('>')) {
            if valid(c) && valid(m) {
                return Ok(Action::peek(c, m));
            }
        } else if valid(c) && valid(rest) {
            return Ok(Action::recv(c, rest));
        }
    }
    Err(format!("malformed action '{text}', expected tau, timeout, c!m, c?m or c?<m>"))
}

// ---------------------------------------------------------------------------
// Resolution

struct Resolver<'a> {
    p: &'a Parser<'a>,
    diags: Vec<Diagnostic>,
}

impl Resolver<'_> {
    fn report(&mut self, kind: DiagnosticKind, at: usize, message: impl Into<String>) {
        self.diags.push(self.p.diag(kind, at, message));
    }

    fn channels(&mut self, raw: &[RawChannel]) -> Vec<ChannelDef> {
        let mut out: Vec<ChannelDef> = Vec::new();
        for c in raw {
            let mut seen = BTreeSet::new();
            for (at, m) in &c.messages {
                if !seen.insert(m.as_str()) {
                    self.report(DiagnosticKind::DuplicateId, *at, format!("message {m} declared twice in channel {}", c.name));
                }
            }
            if c.messages.is_empty() {
                self.report(DiagnosticKind::DomainMismatch, c.at, format!("channel {} has an empty message domain", c.name));
            }
            if c.capacity == 0 || c.capacity > 255 {
                self.report(DiagnosticKind::DomainMismatch, c.at, format!("channel {} capacity must be between 1 and 255", c.name));
            }
            let ids: Vec<String> = match c.count {
                Some(n) => (0..n).map(|i| format!("{}_{i}", c.name)).collect(),
                None => vec![c.name.clone()],
            };
            for id in ids {
                if out.iter().any(|o| o.id == id) {
                    self.report(DiagnosticKind::DuplicateId, c.at, format!("channel {id} declared twice"));
                    continue;
                }
                let domain: Vec<Message> = c.messages.iter().map(|(_, m)| Message::new(m.clone())).collect();
                out.push(ChannelDef { id, domain, capacity: c.capacity });
            }
        }
        out
    }

    fn process(&mut self, raw: &RawProcess, channels: &[ChannelDef]) -> Option<ProcessDecl> {
        let before = self.diags.len();
        let mut vars: Vec<VarDecl> = Vec::new();
        for (at, v) in &raw.vars {
            if vars.iter().any(|o| o.name == v.name) {
                self.report(DiagnosticKind::DuplicateId, *at, format!("variable {} declared twice in {}", v.name, raw.id));
                continue;
            }
            let distinct: BTreeSet<&String> = v.domain.iter().collect();
            if distinct.len() != v.domain.len() {
                self.report(DiagnosticKind::DuplicateId, *at, format!("variable {} repeats a value", v.name));
            }
            if v.domain.is_empty() || !v.domain.contains(&v.init) {
                self.report(DiagnosticKind::DomainMismatch, *at, format!("initial value {} of {} is not in its domain", v.init, v.name));
            }
            vars.push(v.clone());
        }
        let mut states: Vec<String> = Vec::new();
        for (at, s) in &raw.states {
            if states.contains(s) {
                self.report(DiagnosticKind::DuplicateId, *at, format!("state {s} declared twice in {}", raw.id));
            } else {
                states.push(s.clone());
            }
        }
        let state_ok = |me: &mut Self, (at, s): &(usize, String)| {
            if !states.contains(s) {
                me.report(DiagnosticKind::UnresolvedReference, *at, format!("undeclared state {s} in process {}", raw.id));
            }
        };
        let init = match &raw.init {
            Some(i) => {
                state_ok(self, i);
                i.1.clone()
            }
            None => {
                self.report(DiagnosticKind::UnresolvedReference, raw.at, format!("process {} has no init state", raw.id));
                String::new()
            }
        };
        let mut transitions = Vec::new();
        for t in &raw.transitions {
            state_ok(self, &t.source);
            state_ok(self, &t.target);
            let action = match parse_action(&t.action.1) {
                Ok(a) => a,
                Err(e) => {
                    self.report(DiagnosticKind::SyntaxError, t.action.0, e);
                    continue;
                }
            };
            if let (Some(c), Some(m)) = (action.channel(), action.message()) {
                match channels.iter().find(|ch| ch.id == c) {
                    None => self.report(DiagnosticKind::UnresolvedReference, t.action.0, format!("undeclared channel {c}")),
                    Some(ch) if ch.message_index(m).is_none() => {
                        self.report(DiagnosticKind::DomainMismatch, t.action.0, format!("message {m} is not in the domain of {c}"))
                    }
                    _ => {}
                }
            }
            let check_value = |me: &mut Self, at: usize, var: &str, value: &str| match vars.iter().find(|v| v.name == var) {
                None => me.report(DiagnosticKind::UnresolvedReference, at, format!("undeclared variable {var} in process {}", raw.id)),
                Some(v) if !v.domain.iter().any(|d| d == value) => {
                    me.report(DiagnosticKind::DomainMismatch, at, format!("value {value} is not in the domain of {var}"))
                }
                _ => {}
            };
            for (at, c) in &t.guard {
                check_value(self, *at, &c.var, &c.value);
            }
            for (at, var, value) in &t.assign {
                check_value(self, *at, var, value);
            }
            let _ = t.at;
            transitions.push(TransitionDecl {
                source: t.source.1.clone(),
                action,
                target: t.target.1.clone(),
                guard: t.guard.iter().map(|(_, c)| c.clone()).collect(),
                assign: t.assign.iter().map(|(_, v, x)| (v.clone(), x.clone())).collect(),
            });
        }
        (self.diags.len() == before).then(|| ProcessDecl { id: raw.id.clone(), vars, states, init, transitions })
    }

    fn property(&mut self, raw: &RawProperty, decls: &[ProcessDecl], channels: &[ChannelDef]) -> Option<Formula> {
        let f = match parse_formula(&raw.formula) {
            Ok(f) => f,
            Err(e) => {
                self.report(DiagnosticKind::SyntaxError, raw.formula_at + e.pos, format!("in property {}: {}", raw.name, e.message));
                return None;
            }
        };
        let mut errors = Vec::new();
        let expanded = f.map_props(&mut |atom| match resolve_atom(atom, decls, channels) {
            Ok(f) => f,
            Err((kind, msg)) => {
                errors.push((kind, msg));
                Formula::prop(atom)
            }
        });
        for (kind, msg) in errors {
            self.report(kind, raw.formula_at, format!("in property {}: {msg}", raw.name));
        }
        Some(expanded)
    }
}

type AtomError = (DiagnosticKind, String);

fn var_of<'d>(decls: &'d [ProcessDecl], qualified: &'d str) -> Result<(&'d ProcessDecl, Option<&'d VarDecl>, &'d str), AtomError> {
    let unresolved = |m: String| (DiagnosticKind::UnresolvedReference, m);
    let Some((proc_, name)) = qualified.split_once('.') else {
        return Err(unresolved(format!("atom {qualified} must be qualified by a process name")));
    };
    let Some(p) = decls.iter().find(|p| p.id == proc_) else {
        return Err(unresolved(format!("unknown process {proc_}")));
    };
    Ok((p, p.vars.iter().find(|v| v.name == name), name))
}

/// Checks an atom against the declarations, expanding variable-to-variable
/// comparisons.
fn resolve_atom(atom: &str, decls: &[ProcessDecl], channels: &[ChannelDef]) -> Result<Formula, AtomError> {
    let unresolved = |m: String| (DiagnosticKind::UnresolvedReference, m);
    let channel = |c: &str| {
        channels.iter().find(|ch| ch.id == c).ok_or_else(|| unresolved(format!("unknown channel {c}")))
    };
    if let Some(c) = atom.strip_prefix("empty(").and_then(|s| s.strip_suffix(')')) {
        channel(c)?;
        return Ok(Formula::prop(atom));
    }
    if let Some((c, _)) = atom.strip_prefix("len(").and_then(|s| s.split_once(")==")) {
        channel(c)?;
        return Ok(Formula::prop(atom));
    }
    if let Some((lhs, rhs)) = atom.split_once("==") {
        let (_, lv, lname) = var_of(decls, lhs)?;
        let lv = lv.ok_or_else(|| unresolved(format!("unknown variable {lhs}")))?;
        let _ = lname;
        if rhs.contains('.') {
            let (_, rv, _) = var_of(decls, rhs)?;
            let rv = rv.ok_or_else(|| unresolved(format!("unknown variable {rhs}")))?;
            let common: Vec<&String> = lv.domain.iter().filter(|v| rv.domain.contains(v)).collect();
            let mut out: Option<Formula> = None;
            for v in common.into_iter().rev() {
                let both = Formula::and(Formula::prop(format!("{lhs}=={v}")), Formula::prop(format!("{rhs}=={v}")));
                out = Some(match out {
                    None => both,
                    Some(rest) => Formula::or(both, rest),
                });
            }
            return Ok(out.unwrap_or_else(|| Formula::not(Formula::True)));
        }
        if !lv.domain.iter().any(|d| d == rhs) {
            return Err((DiagnosticKind::DomainMismatch, format!("value {rhs} is not in the domain of {lhs}")));
        }
        return Ok(Formula::prop(atom));
    }
    let (p, _, state) = var_of(decls, atom)?;
    if !p.states.iter().any(|s| s == state) {
        return Err(unresolved(format!("unknown state {state} of process {}", p.id)));
    }
    Ok(Formula::prop(atom))
}

/// Expands a process declaration into a transition system over
/// (control state, valuation) pairs reachable from the initial pair.
pub fn expand_process(decl: &ProcessDecl) -> ProcessDef {
    let var_index: HashMap<&str, usize> = decl.vars.iter().enumerate().map(|(i, v)| (v.name.as_str(), i)).collect();
    let value_index = |var: usize, value: &str| decl.vars[var].domain.iter().position(|d| d == value).expect("resolved value");
    let control = |name: &str| decl.states.iter().position(|s| s == name).expect("resolved state");
    let init_vals: Vec<usize> = decl.vars.iter().enumerate().map(|(i, v)| value_index(i, &v.init)).collect();
    type Key = (usize, Vec<usize>);
    let mut ids: BTreeMap<Key, usize> = BTreeMap::new();
    let mut order: Vec<Key> = Vec::new();
    let mut queue = VecDeque::new();
    let start = (control(&decl.init), init_vals);
    ids.insert(start.clone(), 0);
    order.push(start.clone());
    queue.push_back(start);
    let mut transitions = Vec::new();
    while let Some((s, vals)) = queue.pop_front() {
        let here = ids[&(s, vals.clone())];
        for t in decl.transitions.iter().filter(|t| control(&t.source) == s) {
            let enabled = t.guard.iter().all(|c| {
                let v = var_index[c.var.as_str()];
                (vals[v] == value_index(v, &c.value)) == c.equal
            });
            if !enabled {
                continue;
            }
            let mut next = vals.clone();
            for (var, value) in &t.assign {
                let v = var_index[var.as_str()];
                next[v] = value_index(v, value);
            }
            let key = (control(&t.target), next);
            let id = match ids.get(&key) {
                Some(&id) => id,
                None => {
                    let id = order.len();
                    ids.insert(key.clone(), id);
                    order.push(key.clone());
                    queue.push_back(key);
                    id
                }
            };
            transitions.push(Transition { source: here, action: t.action.clone(), target: id });
        }
    }
    transitions.sort_by_key(|t| t.source);
    let mut names = Vec::new();
    let mut labels = Vec::new();
    for (s, vals) in &order {
        let base = &decl.states[*s];
        let mut label = BTreeSet::from([format!("{}.{base}", decl.id)]);
        if decl.vars.is_empty() {
            names.push(base.clone());
        } else {
            let parts: Vec<String> = decl.vars.iter().zip(vals).map(|(v, &x)| format!("{}={}", v.name, v.domain[x])).collect();
            names.push(format!("{base}{{{}}}", parts.join(",")));
        }
        for (v, &x) in decl.vars.iter().zip(vals) {
            label.insert(format!("{}.{}=={}", decl.id, v.name, v.domain[x]));
        }
        labels.push(label);
    }
    ProcessDef::from_parts(decl.id.clone(), names, 0, transitions, labels)
}

/// Parses and resolves a model. All resolution problems are reported
/// together; a syntax error stops parsing at its location.
pub fn parse_model(text: &str) -> Result<ModelDocument, ParseError> {
    let lines = Lines::new(text);
    let toks = match lex(text) {
        Ok(t) => t,
        Err((at, message)) => {
            let (line, column) = lines.locate(text, at);
            return Err(ParseError { diagnostics: vec![Diagnostic { kind: DiagnosticKind::SyntaxError, line, column, message }] });
        }
    };
    let mut parser = Parser { text, lines, toks, pos: 0 };
    let raw = parser.document().map_err(|d| ParseError { diagnostics: vec![d] })?;
    let mut r = Resolver { p: &parser, diags: Vec::new() };
    let channels = r.channels(&raw.channels);
    let mut declarations = Vec::new();
    for p in &raw.processes {
        if declarations.iter().any(|d: &ProcessDecl| d.id == p.id) {
            r.report(DiagnosticKind::DuplicateId, p.at, format!("process {} declared twice", p.id));
            continue;
        }
        if let Some(d) = r.process(p, &channels) {
            declarations.push(d);
        }
    }
    let mut properties: Vec<Property> = Vec::new();
    for p in &raw.properties {
        if properties.iter().any(|o| o.name == p.name) {
            r.report(DiagnosticKind::DuplicateId, p.at, format!("property {} declared twice", p.name));
            continue;
        }
        if let Some(formula) = r.property(p, &declarations, &channels) {
            properties.push(Property { name: p.name.clone(), formula });
        }
    }
    if !r.diags.is_empty() {
        return Err(ParseError { diagnostics: r.diags });
    }
    let processes = declarations.iter().map(expand_process).collect();
    Ok(ModelDocument { title: raw.title, notes: raw.notes, channels, declarations, processes, properties })
}

fn quote(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Prints a document back to the format. Indexed channels come out as their
/// individual members; properties come out with comparisons expanded.
pub fn print_model(doc: &ModelDocument) -> String {
    let mut out = String::new();
    if let Some(t) = &doc.title {
        let _ = writeln!(out, "model {}", quote(t));
    }
    for n in &doc.notes {
        let _ = writeln!(out, "note {}", quote(n));
    }
    if !out.is_empty() {
        out.push('\n');
    }
    for c in &doc.channels {
        let msgs: Vec<&str> = c.domain.iter().map(|m| m.as_str()).collect();
        let _ = writeln!(out, "channel {} capacity {} messages {{{}}}", c.id, c.capacity, msgs.join(", "));
    }
    for p in &doc.declarations {
        let _ = writeln!(out, "\nprocess {} {{", p.id);
        for v in &p.vars {
            let _ = writeln!(out, "    var {} : {{{}}} = {}", v.name, v.domain.join(", "), v.init);
        }
        let _ = writeln!(out, "    states {{{}}}", p.states.join(", "));
        let _ = writeln!(out, "    init {}", p.init);
        for t in &p.transitions {
            let _ = write!(out, "    {} --{}--> {}", t.source, t.action, t.target);
            if !t.guard.is_empty() {
                let conds: Vec<String> =
                    t.guard.iter().map(|c| format!("{} {} {}", c.var, if c.equal { "==" } else { "!=" }, c.value)).collect();
                let _ = write!(out, " when {}", conds.join(" && "));
            }
            if !t.assign.is_empty() {
                let sets: Vec<String> = t.assign.iter().map(|(v, x)| format!("{v} := {x}")).collect();
                let _ = write!(out, " do {}", sets.join(", "));
            }
            out.push('\n');
        }
        out.push_str("}\n");
    }
    if !doc.properties.is_empty() {
        out.push('\n');
    }
    for p in &doc.properties {
        let _ = writeln!(out, "property {} := {}", p.name, p.formula);
    }
    out
}

/// Channel declarations in order: id, capacity, domain.
pub fn list_channels(doc: &ModelDocument) -> Vec<(String, usize, Vec<String>)> {
    doc.channels.iter().map(|c| (c.id.clone(), c.capacity, c.domain.iter().map(|m| m.to_string()).collect())).collect()
}

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("model does not compose: {0}")]
    Compose(#[from] KernelError),
    #[error("property {property} is violated without any attacker")]
    BaselineViolation { property: String, trace: Box<SystemLasso> },
    #[error("model has no infinite run")]
    TrivialModel,
    #[error("baseline check of {0} hit the state cap")]
    Inconclusive(String),
    #[error("property {property}: {message}")]
    Property { property: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BaselineReport {
    /// Property name and explored product states, for each satisfied property.
    pub satisfied: Vec<(String, usize)>,
}

/// Checks that the gadget-free model satisfies every property and has an
/// infinite run.
pub fn validate_baseline(doc: &ModelDocument, options: SearchOptions) -> Result<BaselineReport, BaselineError> {
    let system = doc.system()?;
    let top = ltl_to_buchi(&Formula::True);
    let run = find_accepting_run(&system, &top, options).map_err(|e| BaselineError::Property { property: "true".into(), message: e.to_string() })?;
    match run.outcome {
        SearchOutcome::Found(_) => {}
        SearchOutcome::Absent => return Err(BaselineError::TrivialModel),
        SearchOutcome::LimitReached => return Err(BaselineError::Inconclusive("true".into())),
    }
    let mut satisfied = Vec::new();
    for p in &doc.properties {
        let ba = ltl_to_buchi(&Formula::not(p.formula.clone()));
        let run = find_accepting_run(&system, &ba, options)
            .map_err(|e| BaselineError::Property { property: p.name.clone(), message: e.to_string() })?;
        match run.outcome {
            SearchOutcome::Absent => satisfied.push((p.name.clone(), run.stats.states)),
            SearchOutcome::Found(trace) => return Err(BaselineError::BaselineViolation { property: p.name.clone(), trace: Box::new(trace) }),
            SearchOutcome::LimitReached => return Err(BaselineError::Inconclusive(p.name.clone())),
        }
    }
    Ok(BaselineReport { satisfied })
}
