//! Recursive-descent parser for the five-section source format.
//!
//! Level names, theory variables, theory names and session-type names are
//! resolved while parsing. Process names are left to the checker so that a
//! file may reference definitions it does not (yet) provide.

use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use thiserror::Error;

use crate::ast::{ChanDecl, Exec, Proc, ProcDef, Program, Signature, Span, Term};
use crate::ident::Ident;
use crate::lattice::{validate_lattice, LatticeError, LevelDecl};
use crate::lexer::{lex, Tok};
use crate::security::{Relation, SecPair, SecTerm, SecurityTheory};
use crate::types::SessionType;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{span}: {msg}")]
    Syntax { span: Span, msg: String },
    #[error("{span}: section `{found}` out of order, expected {expected}")]
    SectionOrder {
        span: Span,
        found: String,
        expected: String,
    },
    #[error("{span}: unknown {kind} `{name}`")]
    UnknownIdentifier {
        span: Span,
        kind: &'static str,
        name: String,
    },
    #[error("{span}: {kind} `{name}` defined twice")]
    Duplicate {
        span: Span,
        kind: &'static str,
        name: String,
    },
    #[error("{span}: {source}")]
    Lattice {
        span: Span,
        #[source]
        source: LatticeError,
    },
}

impl ParseError {
    pub fn span(&self) -> Span {
        match self {
            ParseError::Syntax { span, .. }
            | ParseError::SectionOrder { span, .. }
            | ParseError::UnknownIdentifier { span, .. }
            | ParseError::Duplicate { span, .. }
            | ParseError::Lattice { span, .. } => *span,
        }
    }
}

type PResult<T> = Result<T, ParseError>;

// Section keywords in file order; used to tell misplaced sections apart
// from plain syntax errors.
const SECTIONS: &[&str] = &["secrecy", "theory", "stype", "proc", "exec"];

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    levels: HashSet<String>,
    theories: Vec<SecurityTheory>,
    types: HashSet<String>,
}

pub fn parse_program(src: &str) -> PResult<Program> {
    let toks = lex(src).map_err(|e| ParseError::Syntax {
        span: e.span,
        msg: e.msg,
    })?;
    let mut p = Parser {
        toks,
        pos: 0,
        levels: HashSet::new(),
        theories: Vec::new(),
        types: HashSet::new(),
    };
    p.program()
}

/// Parses a single session type against the given type names; used by
/// tests and tools.
pub fn parse_type(src: &str, names: &[&str]) -> PResult<SessionType> {
    let toks = lex(src).map_err(|e| ParseError::Syntax {
        span: e.span,
        msg: e.msg,
    })?;
    let mut p = Parser {
        toks,
        pos: 0,
        levels: HashSet::new(),
        theories: Vec::new(),
        types: names.iter().map(|s| s.to_string()).collect(),
    };
    let t = p.stype()?;
    p.expect_eof()?;
    Ok(t)
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, expected: &str) -> PResult<T> {
        Err(ParseError::Syntax {
            span: self.span(),
            msg: format!("expected {expected}, found {}", self.peek()),
        })
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Keyword(x) if *x == k)
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, k: &str) -> PResult<()> {
        if self.is_kw(k) {
            self.bump();
            Ok(())
        } else {
            self.err(&format!("`{k}`"))
        }
    }

    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(&format!("`{s}`"))
        }
    }

    fn expect_eof(&self) -> PResult<()> {
        if *self.peek() == Tok::Eof {
            Ok(())
        } else {
            self.err("end of input")
        }
    }

    fn ident(&mut self, what: &str) -> PResult<Ident> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(Ident::from(s))
            }
            _ => self.err(what),
        }
    }

    /// Turns a stray section keyword into a section-order error.
    fn section(&mut self, expected: &str) -> PResult<()> {
        if let Tok::Keyword(k) = self.peek() {
            if SECTIONS.contains(k) && !self.is_kw(expected) {
                return Err(ParseError::SectionOrder {
                    span: self.span(),
                    found: k.to_string(),
                    expected: format!("`{expected}`"),
                });
            }
        }
        self.expect_kw(expected)
    }

    fn program(&mut self) -> PResult<Program> {
        let lattice_span = self.span();
        self.section("secrecy")?;
        let decls = self.secrecy()?;
        let lattice = validate_lattice(&decls).map_err(|source| ParseError::Lattice {
            span: lattice_span,
            source,
        })?;
        while self.is_kw("theory") {
            let th = self.theory()?;
            self.theories.push(th);
        }
        self.section("stype")?;
        self.expect_kw("signature")?;
        let typedefs = self.stype_signature()?;
        self.section("proc")?;
        self.expect_kw("signature")?;
        let procdefs = self.proc_signature()?;
        self.section("exec")?;
        let main = self.exec()?;
        if let Tok::Keyword(k) = self.peek() {
            if SECTIONS.contains(k) {
                return Err(ParseError::SectionOrder {
                    span: self.span(),
                    found: k.to_string(),
                    expected: "end of input".into(),
                });
            }
        }
        self.expect_eof()?;
        Ok(Program {
            lattice,
            theories: std::mem::take(&mut self.theories),
            signature: Signature::new(typedefs, procdefs),
            main,
        })
    }

    fn level_name(&mut self) -> PResult<(Ident, Span)> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Level(s) => {
                self.bump();
                Ok((Ident::from(s), span))
            }
            _ => self.err("a level `#name`"),
        }
    }

    fn secrecy(&mut self) -> PResult<Vec<LevelDecl>> {
        let mut decls = Vec::new();
        while !self.is_kw("end") {
            let (name, span) = self.level_name()?;
            self.expect_sym("<")?;
            self.expect_sym("(")?;
            let mut ancestors = Vec::new();
            if !self.is_sym(")") {
                loop {
                    let (a, aspan) = self.level_name()?;
                    if !self.levels.contains(a.as_str()) {
                        return Err(ParseError::UnknownIdentifier {
                            span: aspan,
                            kind: "level",
                            name: format!("#{a}"),
                        });
                    }
                    ancestors.push(a);
                    if !self.eat_sym(",") {
                        break;
                    }
                }
            }
            self.expect_sym(")")?;
            if !self.levels.insert(name.to_string()) {
                return Err(ParseError::Duplicate {
                    span,
                    kind: "level",
                    name: format!("#{name}"),
                });
            }
            decls.push(LevelDecl { name, ancestors });
        }
        self.expect_kw("end")?;
        Ok(decls)
    }

    fn theory(&mut self) -> PResult<SecurityTheory> {
        self.expect_kw("theory")?;
        let span = self.span();
        let name = self.ident("a theory name")?;
        if self.theories.iter().any(|t| t.name == name) {
            return Err(ParseError::Duplicate {
                span,
                kind: "theory",
                name: name.to_string(),
            });
        }
        self.expect_sym("[")?;
        let mut vars: Vec<Ident> = Vec::new();
        if !self.is_sym("]") {
            loop {
                let vspan = self.span();
                let v = self.ident("a security variable")?;
                if vars.contains(&v) {
                    return Err(ParseError::Duplicate {
                        span: vspan,
                        kind: "security variable",
                        name: v.to_string(),
                    });
                }
                vars.push(v);
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        self.expect_sym("]")?;
        let scope: BTreeSet<Ident> = vars.iter().cloned().collect();
        let mut relations = Vec::new();
        while !self.is_kw("end") {
            let lhs = self.sec_term(Some(&scope))?;
            if self.eat_sym("<=") {
                let rhs = self.sec_term(Some(&scope))?;
                relations.push(Relation { lhs, rhs });
            } else if self.eat_sym("=") {
                // Equality is two inequalities.
                let rhs = self.sec_term(Some(&scope))?;
                relations.push(Relation {
                    lhs: lhs.clone(),
                    rhs: rhs.clone(),
                });
                relations.push(Relation { lhs: rhs, rhs: lhs });
            } else {
                return self.err("`<=` or `=`");
            }
            if !self.eat_sym(";") {
                break;
            }
        }
        self.expect_kw("end")?;
        Ok(SecurityTheory { name, vars, relations })
    }

    /// `c |_| d |_| ...`, left-nested. `scope` of `None` accepts any variable.
    fn sec_term(&mut self, scope: Option<&BTreeSet<Ident>>) -> PResult<SecTerm> {
        let mut t = self.sec_atom(scope)?;
        while self.eat_sym("|_|") {
            let r = self.sec_atom(scope)?;
            t = SecTerm::Join(Box::new(t), Box::new(r));
        }
        Ok(t)
    }

    fn sec_atom(&mut self, scope: Option<&BTreeSet<Ident>>) -> PResult<SecTerm> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Level(l) => {
                self.bump();
                if !self.levels.contains(&l) {
                    return Err(ParseError::UnknownIdentifier {
                        span,
                        kind: "level",
                        name: format!("#{l}"),
                    });
                }
                Ok(SecTerm::Level(Ident::from(l)))
            }
            Tok::Ident(v) => {
                self.bump();
                if let Some(s) = scope {
                    if !s.contains(v.as_str()) {
                        return Err(ParseError::UnknownIdentifier {
                            span,
                            kind: "security variable",
                            name: v,
                        });
                    }
                }
                Ok(SecTerm::Var(Ident::from(v)))
            }
            Tok::Sym("(") => {
                self.bump();
                let t = self.sec_term(scope)?;
                self.expect_sym(")")?;
                Ok(t)
            }
            _ => self.err("a security term"),
        }
    }

    /// `[c, e]` or the shorthand `[c]` for `[c, c]`.
    fn sec_pair(&mut self, scope: &BTreeSet<Ident>) -> PResult<SecPair> {
        self.expect_sym("[")?;
        let c = self.sec_term(Some(scope))?;
        let e = if self.eat_sym(",") {
            self.sec_term(Some(scope))?
        } else {
            c.clone()
        };
        self.expect_sym("]")?;
        Ok(SecPair::new(c, e))
    }

    fn stype_signature(&mut self) -> PResult<Vec<(Ident, SessionType)>> {
        // Names are collected first: definitions are mutually recursive.
        let mut i = self.pos;
        while i + 1 < self.toks.len() {
            match (&self.toks[i].0, &self.toks[i + 1].0) {
                (Tok::Keyword("end"), _) => break,
                (Tok::Keyword("stype"), Tok::Ident(n)) => {
                    let n = n.clone();
                    if !self.types.insert(n.clone()) {
                        return Err(ParseError::Duplicate {
                            span: self.toks[i + 1].1,
                            kind: "session type",
                            name: n,
                        });
                    }
                }
                _ => {}
            }
            i += 1;
        }
        let mut defs = Vec::new();
        while !self.is_kw("end") {
            self.expect_kw("stype")?;
            let name = self.ident("a session type name")?;
            self.expect_sym("=")?;
            let t = self.stype()?;
            defs.push((name, t));
        }
        self.expect_kw("end")?;
        Ok(defs)
    }

    fn stype(&mut self) -> PResult<SessionType> {
        let a = self.stype_atom()?;
        if self.eat_sym("*") {
            let b = self.stype()?;
            Ok(SessionType::Tensor(Box::new(a), Box::new(b)))
        } else if self.eat_sym("-o") {
            let b = self.stype()?;
            Ok(SessionType::Lolli(Box::new(a), Box::new(b)))
        } else {
            Ok(a)
        }
    }

    fn stype_atom(&mut self) -> PResult<SessionType> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Keyword("unit") | Tok::Sym("1") => {
                self.bump();
                Ok(SessionType::One)
            }
            Tok::Sym("(") => {
                self.bump();
                let t = self.stype()?;
                self.expect_sym(")")?;
                Ok(t)
            }
            Tok::Sym(s @ ("+" | "&")) => {
                self.bump();
                self.expect_sym("{")?;
                let mut bs = Vec::new();
                loop {
                    let l = self.ident("a label")?;
                    self.expect_sym("->")?;
                    let t = self.stype()?;
                    bs.push((l, t));
                    if !self.eat_sym("|") {
                        break;
                    }
                }
                self.expect_sym("}")?;
                Ok(if s == "+" {
                    SessionType::Plus(bs)
                } else {
                    SessionType::With(bs)
                })
            }
            Tok::Ident(n) => {
                self.bump();
                if !self.types.contains(&n) {
                    return Err(ParseError::UnknownIdentifier {
                        span,
                        kind: "session type",
                        name: n,
                    });
                }
                Ok(SessionType::Var(Ident::from(n)))
            }
            _ => self.err("a session type"),
        }
    }

    fn proc_signature(&mut self) -> PResult<Vec<ProcDef>> {
        let mut defs: Vec<ProcDef> = Vec::new();
        while !self.is_kw("end") {
            let d = self.procdef()?;
            if defs.iter().any(|e| e.name == d.name) {
                return Err(ParseError::Duplicate {
                    span: d.span,
                    kind: "process",
                    name: d.name.to_string(),
                });
            }
            defs.push(d);
        }
        self.expect_kw("end")?;
        Ok(defs)
    }

    fn chan_decl(&mut self, scope: &BTreeSet<Ident>) -> PResult<ChanDecl> {
        let name = self.ident("a channel name")?;
        self.expect_sym(":")?;
        let ty = self.stype()?;
        let sec = self.sec_pair(scope)?;
        Ok(ChanDecl { name, ty, sec })
    }

    fn procdef(&mut self) -> PResult<ProcDef> {
        self.expect_kw("proc")?;
        let span = self.span();
        let name = self.ident("a process name")?;
        self.expect_sym("[")?;
        let tspan = self.span();
        let theory = self.ident("a theory name")?;
        self.expect_sym("]")?;
        let scope: BTreeSet<Ident> = match self.theories.iter().find(|t| t.name == theory) {
            Some(t) => t.vars.iter().cloned().collect(),
            None => {
                return Err(ParseError::UnknownIdentifier {
                    span: tspan,
                    kind: "theory",
                    name: theory.to_string(),
                })
            }
        };
        self.expect_kw("provide")?;
        self.expect_sym("(")?;
        let offered = self.chan_decl(&scope)?;
        self.expect_sym(")")?;
        self.expect_kw("using")?;
        self.expect_sym("(")?;
        let mut params = Vec::new();
        if !self.is_sym(")") {
            loop {
                params.push(self.chan_decl(&scope)?);
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        self.expect_sym(")")?;
        self.expect_kw("at")?;
        let at = self.sec_pair(&scope)?;
        self.expect_sym("=")?;
        let body = self.term(&scope)?;
        Ok(ProcDef {
            name,
            theory,
            offered,
            params,
            at,
            body,
            span,
        })
    }

    fn sec_list(&mut self, scope: Option<&BTreeSet<Ident>>) -> PResult<Vec<SecTerm>> {
        self.expect_sym("[")?;
        let mut out = Vec::new();
        if !self.is_sym("]") {
            loop {
                out.push(self.sec_term(scope)?);
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        self.expect_sym("]")?;
        Ok(out)
    }

    fn term(&mut self, scope: &BTreeSet<Ident>) -> PResult<Term> {
        let p = match self.peek().clone() {
            Tok::Keyword("select") => {
                self.bump();
                let chan = self.ident("a channel")?;
                let label = self.ident("a label")?;
                self.expect_sym(";")?;
                let cont = self.term(scope)?;
                Proc::Select { chan, label, cont }
            }
            Tok::Keyword("case") => {
                self.bump();
                let chan = self.ident("a channel")?;
                self.expect_sym("{")?;
                let mut branches: Vec<(Ident, Term)> = Vec::new();
                loop {
                    let lspan = self.span();
                    let l = self.ident("a label")?;
                    if branches.iter().any(|(m, _)| *m == l) {
                        return Err(ParseError::Duplicate {
                            span: lspan,
                            kind: "branch label",
                            name: l.to_string(),
                        });
                    }
                    self.expect_sym("->")?;
                    let t = self.term(scope)?;
                    branches.push((l, t));
                    if !self.eat_sym("|") {
                        break;
                    }
                }
                self.expect_sym("}")?;
                Proc::Case { chan, branches }
            }
            Tok::Keyword("send") => {
                self.bump();
                let payload = self.ident("a channel")?;
                self.expect_kw("to")?;
                let chan = self.ident("a channel")?;
                self.expect_sym(";")?;
                let cont = self.term(scope)?;
                Proc::Send { payload, chan, cont }
            }
            Tok::Keyword("wait") => {
                self.bump();
                let chan = self.ident("a channel")?;
                self.expect_sym(";")?;
                let cont = self.term(scope)?;
                Proc::Wait { chan, cont }
            }
            Tok::Keyword("close") => {
                self.bump();
                let chan = self.ident("a channel")?;
                Proc::Close { chan }
            }
            Tok::Keyword("forward") => {
                self.bump();
                let used = self.ident("a channel")?;
                self.expect_kw("to")?;
                let offered = self.ident("a channel")?;
                Proc::Forward { offered, used }
            }
            Tok::Keyword("instantiate") => {
                self.bump();
                let binder = self.ident("a channel")?;
                self.expect_sym("=")?;
                let proc = self.ident("a process name")?;
                let subst = self.sec_list(Some(scope))?;
                self.expect_sym("(")?;
                let mut args = Vec::new();
                if !self.is_sym(")") {
                    loop {
                        args.push(self.ident("a channel")?);
                        if !self.eat_sym(",") {
                            break;
                        }
                    }
                }
                self.expect_sym(")")?;
                if self.eat_sym(";") {
                    let cont = self.term(scope)?;
                    Proc::Spawn {
                        binder,
                        proc,
                        subst,
                        args,
                        cont,
                    }
                } else {
                    Proc::TailCall {
                        chan: binder,
                        proc,
                        subst,
                        args,
                    }
                }
            }
            Tok::Ident(_) if matches!(self.peek_at(1), Tok::Sym("=")) => {
                let binder = self.ident("a channel")?;
                self.expect_sym("=")?;
                self.expect_kw("receive")?;
                let chan = self.ident("a channel")?;
                self.expect_sym(";")?;
                let cont = self.term(scope)?;
                Proc::Recv { binder, chan, cont }
            }
            _ => return self.err("a process term"),
        };
        Ok(Arc::new(p))
    }

    fn exec(&mut self) -> PResult<Exec> {
        let proc = self.ident("a process name")?;
        // Variables are kept so the checker can report a non-concrete main.
        let subst = self.sec_list(None)?;
        Ok(Exec { proc, subst })
    }
}
