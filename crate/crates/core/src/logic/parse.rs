//! Recursive-descent parser for the formula grammar:
//!
//! ```text
//! φ ::= IDENT "(" terms? ")" | term "=" term | "and(" φ,* ")"
//!     | "or(" φ,* ")" | "not(" φ ")" | "exists" IDENT ":" SORT "." φ
//! term ::= IDENT | IDENT "(" terms ")"
//! ```
//!
//! Sorts of bound variables come from their binders; sorts of free
//! variables are inferred from relation and function argument positions.

use std::collections::BTreeMap;

use super::{Formula, Signature, Term, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    LParen,
    RParen,
    Comma,
    Eqs,
    Colon,
    Dot,
}

struct Lexer {
    toks: Vec<(Tok, usize)>,
}

fn lex(text: &str) -> Result<Lexer> {
    let mut toks = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '(' => {
                toks.push((Tok::LParen, i));
                i += 1;
            }
            ')' => {
                toks.push((Tok::RParen, i));
                i += 1;
            }
            ',' => {
                toks.push((Tok::Comma, i));
                i += 1;
            }
            '=' => {
                toks.push((Tok::Eqs, i));
                i += 1;
            }
            ':' => {
                toks.push((Tok::Colon, i));
                i += 1;
            }
            '.' => {
                toks.push((Tok::Dot, i));
                i += 1;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                toks.push((Tok::Ident(text[start..i].to_string()), start));
            }
            other => {
                return Err(Error::Parse {
                    position: i,
                    message: format!("unexpected character {other:?}"),
                })
            }
        }
    }
    Ok(Lexer { toks })
}

/// Raw term before sort resolution.
#[derive(Clone, Debug)]
enum RawTerm {
    Var(String),
    App(String, Vec<RawTerm>),
}

#[derive(Clone, Debug)]
enum RawFormula {
    Atomic(String, Vec<RawTerm>),
    Eq(RawTerm, RawTerm),
    And(Vec<RawFormula>),
    Or(Vec<RawFormula>),
    Not(Box<RawFormula>),
    Exists(String, String, Box<RawFormula>),
}

struct Parser<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
    sig: &'a Signature,
    end: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        let position = self.toks.get(self.pos).map(|(_, p)| *p).unwrap_or(self.end);
        Err(Error::Parse { position, message: message.into() })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok) -> Result<()> {
        match self.next() {
            Some(t) if t == tok => Ok(()),
            Some(t) => {
                self.pos -= 1;
                self.err(format!("expected {tok:?}, found {t:?}"))
            }
            None => self.err(format!("expected {tok:?}, found end of input")),
        }
    }

    fn formula(&mut self) -> Result<RawFormula> {
        match self.peek().cloned() {
            Some(Tok::Ident(id)) if id == "and" || id == "or" => {
                self.next();
                self.expect(Tok::LParen)?;
                let items = self.formula_list()?;
                Ok(if id == "and" { RawFormula::And(items) } else { RawFormula::Or(items) })
            }
            Some(Tok::Ident(id)) if id == "not" => {
                self.next();
                self.expect(Tok::LParen)?;
                let body = self.formula()?;
                self.expect(Tok::RParen)?;
                Ok(RawFormula::Not(Box::new(body)))
            }
            Some(Tok::Ident(id)) if id == "exists" => {
                self.next();
                let name = self.ident()?;
                self.expect(Tok::Colon)?;
                let sort = self.ident()?;
                if !self.sig.has_sort(&sort) {
                    return self.err(format!("unknown sort {sort:?}"));
                }
                self.expect(Tok::Dot)?;
                let body = self.formula()?;
                Ok(RawFormula::Exists(name, sort, Box::new(body)))
            }
            Some(Tok::Ident(id)) if self.sig.relations().contains_key(&id) => {
                // could still be a term in an equation when a relation and
                // function share arity shapes; relations win at formula level
                self.next();
                self.expect(Tok::LParen)?;
                let args = self.term_list()?;
                Ok(RawFormula::Atomic(id, args))
            }
            Some(Tok::Ident(_)) => {
                let lhs = self.term()?;
                self.expect(Tok::Eqs)?;
                let rhs = self.term()?;
                Ok(RawFormula::Eq(lhs, rhs))
            }
            Some(t) => self.err(format!("expected a formula, found {t:?}")),
            None => self.err("expected a formula, found end of input"),
        }
    }

    fn formula_list(&mut self) -> Result<Vec<RawFormula>> {
        let mut items = Vec::new();
        if self.peek() == Some(&Tok::RParen) {
            self.next();
            return Ok(items);
        }
        loop {
            items.push(self.formula()?);
            match self.next() {
                Some(Tok::Comma) => continue,
                Some(Tok::RParen) => return Ok(items),
                Some(t) => {
                    self.pos -= 1;
                    return self.err(format!("expected ',' or ')', found {t:?}"));
                }
                None => return self.err("unterminated list"),
            }
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.next() {
            Some(Tok::Ident(id)) => Ok(id),
            Some(t) => {
                self.pos -= 1;
                self.err(format!("expected identifier, found {t:?}"))
            }
            None => self.err("expected identifier, found end of input"),
        }
    }

    fn term(&mut self) -> Result<RawTerm> {
        let id = self.ident()?;
        if self.peek() == Some(&Tok::LParen) {
            if !self.sig.functions().contains_key(&id) {
                self.pos -= 1;
                return self.err(format!("unknown function {id:?}"));
            }
            self.next();
            let args = self.term_list()?;
            Ok(RawTerm::App(id, args))
        } else if self.sig.functions().get(&id).is_some_and(|(args, _)| args.is_empty()) {
            // nullary function used without parentheses is not in the
            // grammar; identifiers alone are variables
            Ok(RawTerm::Var(id))
        } else {
            Ok(RawTerm::Var(id))
        }
    }

    fn term_list(&mut self) -> Result<Vec<RawTerm>> {
        let mut items = Vec::new();
        if self.peek() == Some(&Tok::RParen) {
            self.next();
            return Ok(items);
        }
        loop {
            items.push(self.term()?);
            match self.next() {
                Some(Tok::Comma) => continue,
                Some(Tok::RParen) => return Ok(items),
                Some(t) => {
                    self.pos -= 1;
                    return self.err(format!("expected ',' or ')', found {t:?}"));
                }
                None => return self.err("unterminated term list"),
            }
        }
    }
}

/// Sort resolution: walk the raw tree, assigning bound sorts from binders
/// and inferring free-variable sorts from argument positions.
struct Resolver<'a> {
    sig: &'a Signature,
    free: BTreeMap<String, String>,
}

impl<'a> Resolver<'a> {
    fn term(
        &mut self,
        raw: &RawTerm,
        expected: Option<&str>,
        bound: &BTreeMap<String, String>,
    ) -> Result<Term> {
        match raw {
            RawTerm::Var(name) => {
                let sort = if let Some(s) = bound.get(name) {
                    if let Some(e) = expected {
                        if e != s {
                            return Err(Error::Sort(format!(
                                "variable {name} of sort {s} used where {e} is expected"
                            )));
                        }
                    }
                    s.clone()
                } else if let Some(s) = self.free.get(name) {
                    if let Some(e) = expected {
                        if e != s {
                            return Err(Error::Sort(format!(
                                "variable {name} of sort {s} used where {e} is expected"
                            )));
                        }
                    }
                    s.clone()
                } else if let Some(e) = expected {
                    self.free.insert(name.clone(), e.to_string());
                    e.to_string()
                } else if self.sig.sorts().len() == 1 {
                    let s = self.sig.sorts()[0].clone();
                    self.free.insert(name.clone(), s.clone());
                    s
                } else {
                    return Err(Error::Sort(format!(
                        "cannot infer sort of variable {name} in a multi-sorted signature"
                    )));
                };
                Ok(Term::Var(Var::new(name.clone(), sort)))
            }
            RawTerm::App(f, args) => {
                let (arg_sorts, _res) = {
                    let (a, r) = self.sig.function_decl(f)?;
                    (a.to_vec(), r.to_string())
                };
                if arg_sorts.len() != args.len() {
                    return Err(Error::Sort(format!(
                        "function {f} expects {} arguments, got {}",
                        arg_sorts.len(),
                        args.len()
                    )));
                }
                let mut out = Vec::new();
                for (raw_arg, s) in args.iter().zip(&arg_sorts) {
                    out.push(self.term(raw_arg, Some(s), bound)?);
                }
                if let Some(e) = expected {
                    let (_, res) = self.sig.function_decl(f)?;
                    if res != e {
                        return Err(Error::Sort(format!(
                            "function {f} has sort {res}, expected {e}"
                        )));
                    }
                }
                Ok(Term::App(f.clone(), out))
            }
        }
    }

    fn formula(&mut self, raw: &RawFormula, bound: &BTreeMap<String, String>) -> Result<Formula> {
        match raw {
            RawFormula::Atomic(rel, args) => {
                let arg_sorts = self.sig.relation_args(rel)?.to_vec();
                if arg_sorts.len() != args.len() {
                    return Err(Error::Sort(format!(
                        "relation {rel} expects {} arguments, got {}",
                        arg_sorts.len(),
                        args.len()
                    )));
                }
                let mut out = Vec::new();
                for (raw_arg, s) in args.iter().zip(&arg_sorts) {
                    out.push(self.term(raw_arg, Some(s), bound)?);
                }
                Ok(Formula::Atomic(rel.clone(), out))
            }
            RawFormula::Eq(a, b) => {
                // try to give both sides a sort: terms with functions pin it
                let ta = self.term(a, None, bound);
                match ta {
                    Ok(lhs) => {
                        let sort = super::term_sort(self.sig, &lhs)?;
                        let rhs = self.term(b, Some(&sort), bound)?;
                        Ok(Formula::Eq(lhs, rhs))
                    }
                    Err(_) => {
                        let rhs = self.term(b, None, bound)?;
                        let sort = super::term_sort(self.sig, &rhs)?;
                        let lhs = self.term(a, Some(&sort), bound)?;
                        Ok(Formula::Eq(lhs, rhs))
                    }
                }
            }
            RawFormula::And(fs) => Ok(Formula::And(
                fs.iter().map(|g| self.formula(g, bound)).collect::<Result<_>>()?,
            )),
            RawFormula::Or(fs) => Ok(Formula::Or(
                fs.iter().map(|g| self.formula(g, bound)).collect::<Result<_>>()?,
            )),
            RawFormula::Not(g) => Ok(Formula::not(self.formula(g, bound)?)),
            RawFormula::Exists(name, sort, body) => {
                let mut inner = bound.clone();
                inner.insert(name.clone(), sort.clone());
                Ok(Formula::exists(Var::new(name.clone(), sort.clone()), self.formula(body, &inner)?))
            }
        }
    }
}

pub fn parse_formula(text: &str, sig: &Signature) -> Result<Formula> {
    let lexer = lex(text)?;
    let mut parser = Parser { toks: &lexer.toks, pos: 0, sig, end: text.len() };
    let raw = parser.formula()?;
    if parser.pos != parser.toks.len() {
        return parser.err("trailing input after formula");
    }
    let mut resolver = Resolver { sig, free: BTreeMap::new() };
    let f = resolver.formula(&raw, &BTreeMap::new())?;
    f.well_sorted(sig)?;
    Ok(f)
}

pub fn parse_term(text: &str, sig: &Signature) -> Result<Term> {
    let lexer = lex(text)?;
    let mut parser = Parser { toks: &lexer.toks, pos: 0, sig, end: text.len() };
    let raw = parser.term()?;
    if parser.pos != parser.toks.len() {
        return parser.err("trailing input after term");
    }
    let mut resolver = Resolver { sig, free: BTreeMap::new() };
    resolver.term(&raw, None, &BTreeMap::new())
}

#[cfg(test)]
mod tests {
    use super::super::{print_formula, Formula, Signature, Term, Var};
    use super::parse_formula;

    fn sig() -> Signature {
        Signature::new(
            vec!["S".into()],
            vec![("R".into(), vec!["S".into(), "S".into()]), ("P".into(), vec!["S".into()])],
            vec![("f".into(), vec!["S".into()], "S".into())],
        )
        .unwrap()
    }

    #[test]
    fn parse_basic() {
        let s = sig();
        let f = parse_formula("exists y:S. and(R(x, y), not(P(y)))", &s).unwrap();
        let expected = Formula::exists(
            Var::new("y", "S"),
            Formula::And(vec![
                Formula::atom("R", vec![Term::var("x", "S"), Term::var("y", "S")]),
                Formula::not(Formula::atom("P", vec![Term::var("y", "S")])),
            ]),
        );
        assert_eq!(f, expected);
    }

    #[test]
    fn parse_empty_connectives() {
        let s = sig();
        assert_eq!(parse_formula("and()", &s).unwrap(), Formula::top());
        assert_eq!(
            parse_formula("or(P(x), or())", &s).unwrap(),
            Formula::Or(vec![Formula::atom("P", vec![Term::var("x", "S")]), Formula::bot()])
        );
    }

    #[test]
    fn parse_equality_and_terms() {
        let s = sig();
        let f = parse_formula("f(x) = y", &s).unwrap();
        assert_eq!(
            f,
            Formula::Eq(
                Term::App("f".into(), vec![Term::var("x", "S")]),
                Term::var("y", "S")
            )
        );
    }

    #[test]
    fn parse_errors_carry_position() {
        let s = sig();
        match parse_formula("and(P(x), ", &s) {
            Err(crate::Error::Parse { position, .. }) => assert!(position >= 9),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_formula("Q(x)", &s) {
            Err(crate::Error::Parse { .. }) | Err(crate::Error::Sort(_)) => {}
            other => panic!("expected error, got {other:?}"),
        }
    }

    #[test]
    fn sort_error_on_arity_mismatch() {
        let s = sig();
        assert!(parse_formula("R(x)", &s).is_err());
        assert!(parse_formula("P(f(x))", &s).is_ok());
    }

    #[test]
    fn roundtrip_print_parse() {
        let s = sig();
        let samples = [
            "and()",
            "or()",
            "P(x)",
            "R(x, y)",
            "x = y",
            "f(x) = f(f(y))",
            "exists y:S. and(R(x, y), not(P(y)))",
            "not(exists z:S. or(P(z), z = x))",
            "and(P(x), or(P(y), and()), exists w:S. R(w, w))",
        ];
        for text in samples {
            let f = parse_formula(text, &s).unwrap();
            assert_eq!(print_formula(&f), text, "canonical text mismatch");
            let g = parse_formula(&print_formula(&f), &s).unwrap();
            assert_eq!(f, g);
        }
    }
}
