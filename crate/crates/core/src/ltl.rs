//! LTL formulas: syntax tree, concrete syntax, derived-operator expansion and
//! direct evaluation over ultimately periodic words.
//!
//! Grammar (lowest precedence first; `U` and `->` associate to the right):
//!
//! ```text
//! formula  := or ( "->" formula )?
//! or       := and ( "||" and )*
//! and      := until ( "&&" until )*
//! until    := unary ( "U" until )?
//! unary    := ( "!" | "X" | "F" | "G" ) unary | primary
//! primary  := "(" formula ")" | "true" | "false" | atom
//! atom     := "empty" "(" ident ")"
//!           | "len" "(" ident ")" ( "==" | "!=" ) number
//!           | ident ( ( "==" | "!=" ) ( ident | number ) )?
//! ident    := [A-Za-z_][A-Za-z0-9_.]*
//! ```
//!
//! `x != y` is sugar for `!(x == y)`. Atoms are kept as canonical strings
//! (`empty(c)`, `len(c)==1`, `A.bit==0`, `A.x==B.y`).

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Formula {
    True,
    Prop(String),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Next(Box<Formula>),
    Until(Box<Formula>, Box<Formula>),
    Eventually(Box<Formula>),
    Always(Box<Formula>),
}

impl Formula {
    pub fn prop(p: impl Into<String>) -> Self {
        Formula::Prop(p.into())
    }

    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn implies(a: Formula, b: Formula) -> Self {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn next(f: Formula) -> Self {
        Formula::Next(Box::new(f))
    }

    pub fn until(a: Formula, b: Formula) -> Self {
        Formula::Until(Box::new(a), Box::new(b))
    }

    pub fn eventually(f: Formula) -> Self {
        Formula::Eventually(Box::new(f))
    }

    pub fn always(f: Formula) -> Self {
        Formula::Always(Box::new(f))
    }

    pub fn props(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_props(&mut out);
        out
    }

    fn collect_props(&self, out: &mut BTreeSet<String>) {
        match self {
            Formula::True => {}
            Formula::Prop(p) => {
                out.insert(p.clone());
            }
            Formula::Not(a) | Formula::Next(a) | Formula::Eventually(a) | Formula::Always(a) => a.collect_props(out),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Until(a, b) => {
                a.collect_props(out);
                b.collect_props(out);
            }
        }
    }

    /// Number of syntax-tree nodes.
    pub fn size(&self) -> usize {
        match self {
            Formula::True | Formula::Prop(_) => 1,
            Formula::Not(a) | Formula::Next(a) | Formula::Eventually(a) | Formula::Always(a) => 1 + a.size(),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Until(a, b) => {
                1 + a.size() + b.size()
            }
        }
    }

    /// Nesting depth of temporal operators.
    pub fn temporal_depth(&self) -> usize {
        match self {
            Formula::True | Formula::Prop(_) => 0,
            Formula::Not(a) => a.temporal_depth(),
            Formula::Next(a) | Formula::Eventually(a) | Formula::Always(a) => 1 + a.temporal_depth(),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => a.temporal_depth().max(b.temporal_depth()),
            Formula::Until(a, b) => 1 + a.temporal_depth().max(b.temporal_depth()),
        }
    }

    /// True when only `true`, propositions, `!`, `&&`, `X` and `U` occur.
    pub fn is_core(&self) -> bool {
        match self {
            Formula::True | Formula::Prop(_) => true,
            Formula::Not(a) | Formula::Next(a) => a.is_core(),
            Formula::And(a, b) | Formula::Until(a, b) => a.is_core() && b.is_core(),
            _ => false,
        }
    }

    /// Rewrites every proposition through `f`.
    pub fn map_props(&self, f: &mut impl FnMut(&str) -> Formula) -> Formula {
        let bx = |x: Formula| Box::new(x);
        match self {
            Formula::True => Formula::True,
            Formula::Prop(p) => f(p),
            Formula::Not(a) => Formula::Not(bx(a.map_props(f))),
            Formula::Next(a) => Formula::Next(bx(a.map_props(f))),
            Formula::Eventually(a) => Formula::Eventually(bx(a.map_props(f))),
            Formula::Always(a) => Formula::Always(bx(a.map_props(f))),
            Formula::And(a, b) => Formula::And(bx(a.map_props(f)), bx(b.map_props(f))),
            Formula::Or(a, b) => Formula::Or(bx(a.map_props(f)), bx(b.map_props(f))),
            Formula::Implies(a, b) => Formula::Implies(bx(a.map_props(f)), bx(b.map_props(f))),
            Formula::Until(a, b) => Formula::Until(bx(a.map_props(f)), bx(b.map_props(f))),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Formula::Implies(..) => 1,
            Formula::Or(..) => 2,
            Formula::And(..) => 3,
            Formula::Until(..) => 4,
            Formula::Not(_) | Formula::Next(_) | Formula::Eventually(_) | Formula::Always(_) => 5,
            Formula::True | Formula::Prop(_) => 6,
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, child: &Formula, min: u8) -> fmt::Result {
    if child.precedence() < min {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::True => f.write_str("true"),
            Formula::Prop(p) => f.write_str(p),
            Formula::Not(a) => {
                f.write_str("!")?;
                write_child(f, a, 5)
            }
            Formula::Next(a) | Formula::Eventually(a) | Formula::Always(a) => {
                let op = match self {
                    Formula::Next(_) => "X ",
                    Formula::Eventually(_) => "F ",
                    _ => "G ",
                };
                f.write_str(op)?;
                write_child(f, a, 5)
            }
            Formula::And(a, b) | Formula::Or(a, b) => {
                let (op, p) = if matches!(self, Formula::And(..)) { (" && ", 3) } else { (" || ", 2) };
                write_child(f, a, p)?;
                f.write_str(op)?;
                write_child(f, b, p + 1)
            }
            Formula::Implies(a, b) => {
                write_child(f, a, 2)?;
                f.write_str(" -> ")?;
                write_child(f, b, 1)
            }
            Formula::Until(a, b) => {
                write_child(f, a, 5)?;
                f.write_str(" U ")?;
                write_child(f, b, 4)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at offset {pos}: {message}")]
pub struct SyntaxError {
    pub pos: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Number(String),
    LParen,
    RParen,
    Not,
    And,
    Or,
    Implies,
    Eq,
    Ne,
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, SyntaxError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let two = |s: &[u8]| bytes[i..].starts_with(s);
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c == b'(' {
            out.push((i, Tok::LParen));
            i += 1;
        } else if c == b')' {
            out.push((i, Tok::RParen));
            i += 1;
        } else if two(b"&&") {
            out.push((i, Tok::And));
            i += 2;
        } else if two(b"||") {
            out.push((i, Tok::Or));
            i += 2;
        } else if two(b"->") {
            out.push((i, Tok::Implies));
            i += 2;
        } else if two(b"==") {
            out.push((i, Tok::Eq));
            i += 2;
        } else if two(b"!=") {
            out.push((i, Tok::Ne));
            i += 2;
        } else if c == b'!' {
            out.push((i, Tok::Not));
            i += 1;
        } else if c.is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            out.push((start, Tok::Number(text[start..i].to_string())));
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'.') {
                i += 1;
            }
            out.push((start, Tok::Ident(text[start..i].to_string())));
        } else {
            let ch = text[i..].chars().next().unwrap_or('?');
            return Err(SyntaxError { pos: i, message: format!("unexpected character {ch:?}") });
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(o, _)| *o).unwrap_or(self.end)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, SyntaxError> {
        Err(SyntaxError { pos: self.offset(), message: message.into() })
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), SyntaxError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn is_op(&self, name: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == name)
    }

    fn formula(&mut self) -> Result<Formula, SyntaxError> {
        let lhs = self.or()?;
        if self.peek() == Some(&Tok::Implies) {
            self.pos += 1;
            let rhs = self.formula()?;
            return Ok(Formula::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Formula, SyntaxError> {
        let mut lhs = self.and()?;
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            lhs = Formula::or(lhs, self.and()?);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Formula, SyntaxError> {
        let mut lhs = self.until()?;
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            lhs = Formula::and(lhs, self.until()?);
        }
        Ok(lhs)
    }

    fn until(&mut self) -> Result<Formula, SyntaxError> {
        let lhs = self.unary()?;
        if self.is_op("U") {
            self.pos += 1;
            let rhs = self.until()?;
            return Ok(Formula::until(lhs, rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, SyntaxError> {
        match self.peek() {
            Some(Tok::Not) => {
                self.pos += 1;
                Ok(Formula::not(self.unary()?))
            }
            Some(Tok::Ident(s)) if s == "X" || s == "F" || s == "G" => {
                let op = s.clone();
                self.pos += 1;
                let inner = self.unary()?;
                Ok(match op.as_str() {
                    "X" => Formula::next(inner),
                    "F" => Formula::eventually(inner),
                    _ => Formula::always(inner),
                })
            }
            _ => self.primary(),
        }
    }

    fn operand(&mut self) -> Result<String, SyntaxError> {
        match self.bump() {
            Some(Tok::Ident(s)) if !is_keyword(&s) => Ok(s),
            Some(Tok::Number(n)) => Ok(n),
            _ => {
                self.pos -= 1;
                self.err("expected identifier or number")
            }
        }
    }

    fn comparison(&mut self, lhs: String) -> Result<Formula, SyntaxError> {
        let negate = match self.peek() {
            Some(Tok::Eq) => false,
            Some(Tok::Ne) => true,
            _ => return Ok(Formula::Prop(lhs)),
        };
        self.pos += 1;
        let rhs = self.operand()?;
        let atom = Formula::Prop(format!("{lhs}=={rhs}"));
        Ok(if negate { Formula::not(atom) } else { atom })
    }

    fn primary(&mut self) -> Result<Formula, SyntaxError> {
        match self.bump() {
            Some(Tok::LParen) => {
                let f = self.formula()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(f)
            }
            Some(Tok::Ident(s)) => match s.as_str() {
                "true" => Ok(Formula::True),
                "false" => Ok(Formula::not(Formula::True)),
                "U" => {
                    self.pos -= 1;
                    self.err("missing left operand of U")
                }
                "empty" | "len" if self.peek() == Some(&Tok::LParen) => {
                    self.pos += 1;
                    let ch = match self.bump() {
                        Some(Tok::Ident(c)) => c,
                        _ => {
                            self.pos -= 1;
                            return self.err("expected channel name");
                        }
                    };
                    self.expect(Tok::RParen, "')'")?;
                    if s == "empty" {
                        return Ok(Formula::Prop(format!("empty({ch})")));
                    }
                    let negate = match self.bump() {
                        Some(Tok::Eq) => false,
                        Some(Tok::Ne) => true,
                        _ => {
                            self.pos -= 1;
                            return self.err("expected '==' or '!=' after len(..)");
                        }
                    };
                    let n = match self.bump() {
                        Some(Tok::Number(n)) => n,
                        _ => {
                            self.pos -= 1;
                            return self.err("expected a number");
                        }
                    };
                    let atom = Formula::Prop(format!("len({ch})=={n}"));
                    Ok(if negate { Formula::not(atom) } else { atom })
                }
                _ => self.comparison(s),
            },
            Some(Tok::Number(n)) => self.comparison(n),
            Some(_) => {
                self.pos -= 1;
                self.err("expected a formula")
            }
            None => self.err("unexpected end of input, missing operand"),
        }
    }
}

fn is_keyword(s: &str) -> bool {
    matches!(s, "X" | "F" | "G" | "U" | "true" | "false")
}

pub fn parse_formula(text: &str) -> Result<Formula, SyntaxError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, end: text.len() };
    let f = p.formula()?;
    if p.pos < p.toks.len() {
        return p.err("unexpected trailing input");
    }
    Ok(f)
}

/// Rewrites `F`, `G`, `||` and `->` into `true`, `!`, `&&`, `X` and `U`.
pub fn expand_derived(f: &Formula) -> Formula {
    match f {
        Formula::True | Formula::Prop(_) => f.clone(),
        Formula::Not(a) => Formula::not(expand_derived(a)),
        Formula::Next(a) => Formula::next(expand_derived(a)),
        Formula::And(a, b) => Formula::and(expand_derived(a), expand_derived(b)),
        Formula::Until(a, b) => Formula::until(expand_derived(a), expand_derived(b)),
        Formula::Eventually(a) => Formula::until(Formula::True, expand_derived(a)),
        Formula::Always(a) => {
            Formula::not(Formula::until(Formula::True, Formula::not(expand_derived(a))))
        }
        Formula::Or(a, b) => {
            Formula::not(Formula::and(Formula::not(expand_derived(a)), Formula::not(expand_derived(b))))
        }
        Formula::Implies(a, b) => Formula::not(Formula::and(expand_derived(a), Formula::not(expand_derived(b)))),
    }
}

/// The infinite word `prefix · cycle^ω`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LassoWord<L = BTreeSet<String>> {
    pub prefix: Vec<L>,
    pub cycle: Vec<L>,
}

impl<L> LassoWord<L> {
    pub fn new(prefix: Vec<L>, cycle: Vec<L>) -> Self {
        assert!(!cycle.is_empty(), "lasso cycle must be nonempty");
        LassoWord { prefix, cycle }
    }

    /// Number of distinct positions.
    pub fn len(&self) -> usize {
        self.prefix.len() + self.cycle.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn succ(&self, i: usize) -> usize {
        if i + 1 < self.len() {
            i + 1
        } else {
            self.prefix.len()
        }
    }

    pub fn letter(&self, i: usize) -> &L {
        if i < self.prefix.len() {
            &self.prefix[i]
        } else {
            &self.cycle[i - self.prefix.len()]
        }
    }
}

/// Builds a label-set word from string slices, for tests and examples.
pub fn word(prefix: &[&[&str]], cycle: &[&[&str]]) -> LassoWord {
    let conv = |v: &[&[&str]]| v.iter().map(|s| s.iter().map(|p| p.to_string()).collect()).collect();
    LassoWord::new(conv(prefix), conv(cycle))
}

fn sat(f: &Formula, w: &LassoWord) -> Vec<bool> {
    let n = w.len();
    match f {
        Formula::True => vec![true; n],
        Formula::Prop(p) => (0..n).map(|i| w.letter(i).contains(p)).collect(),
        Formula::Not(a) => sat(a, w).into_iter().map(|x| !x).collect(),
        Formula::And(a, b) => sat(a, w).into_iter().zip(sat(b, w)).map(|(x, y)| x && y).collect(),
        Formula::Or(a, b) => sat(a, w).into_iter().zip(sat(b, w)).map(|(x, y)| x || y).collect(),
        Formula::Implies(a, b) => sat(a, w).into_iter().zip(sat(b, w)).map(|(x, y)| !x || y).collect(),
        Formula::Next(a) => {
            let va = sat(a, w);
            (0..n).map(|i| va[w.succ(i)]).collect()
        }
        Formula::Until(a, b) => until(&sat(a, w), &sat(b, w), w),
        Formula::Eventually(a) => until(&vec![true; n], &sat(a, w), w),
        Formula::Always(a) => {
            let va = sat(a, w);
            (0..n)
                .map(|i| {
                    let mut j = i;
                    for _ in 0..=scan_bound(w) {
                        if !va[j] {
                            return false;
                        }
                        j = w.succ(j);
                    }
                    true
                })
                .collect()
        }
    }
}

/// Every position of the word is visited within this many successor steps.
fn scan_bound<L>(w: &LassoWord<L>) -> usize {
    w.prefix.len() + 2 * w.cycle.len()
}

fn until(va: &[bool], vb: &[bool], w: &LassoWord) -> Vec<bool> {
    (0..w.len())
        .map(|i| {
            let mut j = i;
            for _ in 0..=scan_bound(w) {
                if vb[j] {
                    return true;
                }
                if !va[j] {
                    return false;
                }
                j = w.succ(j);
            }
            false
        })
        .collect()
}

/// Decides `w, i ⊨ f`.
pub fn eval_word(f: &Formula, w: &LassoWord, i: usize) -> bool {
    assert!(i < w.len(), "position {i} beyond lasso of length {}", w.len());
    sat(f, w)[i]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Formula {
        Formula::prop(s)
    }

    #[test]
    fn parses_examples() {
        assert_eq!(
            parse_formula("G (p -> F q)").unwrap(),
            Formula::always(Formula::implies(p("p"), Formula::eventually(p("q"))))
        );
        assert_eq!(
            parse_formula("p U q U r").unwrap(),
            Formula::until(p("p"), Formula::until(p("q"), p("r")))
        );
        assert!(parse_formula("G F").is_err());
    }

    #[test]
    fn precedence_and_atoms() {
        assert_eq!(
            parse_formula("a && b || c -> d").unwrap(),
            Formula::implies(Formula::or(Formula::and(p("a"), p("b")), p("c")), p("d"))
        );
        assert_eq!(parse_formula("!a U b").unwrap(), Formula::until(Formula::not(p("a")), p("b")));
        assert_eq!(parse_formula("a U b && c").unwrap(), Formula::and(Formula::until(p("a"), p("b")), p("c")));
        assert_eq!(parse_formula("A.packet != B.packet").unwrap(), Formula::not(p("A.packet==B.packet")));
        assert_eq!(parse_formula("len(AtoB) == 0").unwrap(), p("len(AtoB)==0"));
        assert_eq!(parse_formula("empty(AtoB)").unwrap(), p("empty(AtoB)"));
        assert_eq!(parse_formula("A.bit == 1").unwrap(), p("A.bit==1"));
    }

    #[test]
    fn syntax_errors_have_positions() {
        let e = parse_formula("p && ").unwrap_err();
        assert_eq!(e.pos, 5);
        let e = parse_formula("p # q").unwrap_err();
        assert_eq!(e.pos, 2);
        assert!(parse_formula("(p").is_err());
        assert!(parse_formula("p q").is_err());
        assert!(parse_formula("U p").is_err());
    }

    #[test]
    fn printer_round_trip_corpus() {
        let corpus = [
            "G !(A.Closed && B.Established)",
            "G (p -> F q)",
            "p U q U r",
            "(p U q) U r",
            "F (A.Closed && B.Closed)",
            "G (A.FinWait1 -> F A.Closed)",
            "X X p || !q",
            "G (!A.packet==B.packet -> F A.packet==B.packet)",
            "empty(AtoB) U len(BtoA)==2",
            "a -> b -> c",
            "(a -> b) -> c",
            "!(a || b) && c",
            "true U !true",
        ];
        for text in corpus {
            let f = parse_formula(text).unwrap();
            assert_eq!(f.to_string(), text);
            assert_eq!(parse_formula(&f.to_string()).unwrap(), f);
        }
    }

    #[test]
    fn expansion_examples() {
        assert_eq!(expand_derived(&parse_formula("F p").unwrap()), Formula::until(Formula::True, p("p")));
        assert_eq!(
            expand_derived(&parse_formula("G p").unwrap()),
            Formula::not(Formula::until(Formula::True, Formula::not(p("p"))))
        );
        assert_eq!(expand_derived(&p("p")), p("p"));
        assert!(expand_derived(&parse_formula("G (a -> F b || c)").unwrap()).is_core());
    }

    #[test]
    fn eval_examples() {
        let g = parse_formula("G p").unwrap();
        assert!(eval_word(&g, &word(&[], &[&["p"]]), 0));
        let x = parse_formula("X p").unwrap();
        assert!(eval_word(&x, &word(&[&[]], &[&["p"]]), 0));
        let u = parse_formula("p U q").unwrap();
        assert!(!eval_word(&u, &word(&[&["p"]], &[&[]]), 0));
    }

    #[test]
    fn eval_wraps_around_cycle() {
        // q appears only at the cycle head, reached again from the cycle end.
        let w = word(&[&["p"]], &[&["q"], &["p"], &["p"]]);
        let f = parse_formula("p U q").unwrap();
        assert!((0..w.len()).all(|i| eval_word(&f, &w, i)));
        assert!(eval_word(&parse_formula("G F q").unwrap(), &w, 0));
        assert!(!eval_word(&parse_formula("F G p").unwrap(), &w, 0));
    }
}
