//! Abstract syntax of programs and process terms.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::ident::Ident;
use crate::lattice::{ConcreteLattice, LevelDecl};
use crate::security::{SecError, SecPair, SecTerm, SecurityTheory, Substitution};
use crate::types::{SessionType, TypeDefs};

/// Source position. Deliberately ignored by equality so that ASTs compare
/// equal across a print/parse round trip.
#[derive(Clone, Copy, Debug, Default)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl std::hash::Hash for Span {
    fn hash<H: std::hash::Hasher>(&self, _: &mut H) {}
}

impl PartialEq for Span {
    fn eq(&self, _: &Span) -> bool {
        true
    }
}

impl Eq for Span {}

impl std::fmt::Display for Span {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

pub type Term = Arc<Proc>;

/// Process terms. Channel names are source variables; their security pairs
/// come from the typing context rather than from annotations.
#[derive(Clone, PartialEq, Eq, Debug, Hash)]
pub enum Proc {
    /// `select x K; P`
    Select { chan: Ident, label: Ident, cont: Term },
    /// `case x { l -> P | ... }`
    Case { chan: Ident, branches: Vec<(Ident, Term)> },
    /// `send y to x; P`
    Send { payload: Ident, chan: Ident, cont: Term },
    /// `y = receive x; P`
    Recv { binder: Ident, chan: Ident, cont: Term },
    /// `close x`
    Close { chan: Ident },
    /// `wait x; P`
    Wait { chan: Ident, cont: Term },
    /// `instantiate x = X[γ](args); P`
    Spawn {
        binder: Ident,
        proc: Ident,
        subst: Vec<SecTerm>,
        args: Vec<Ident>,
        cont: Term,
    },
    /// Terminal `instantiate x = X[γ](args)`: sugar for a spawn plus forward.
    TailCall {
        chan: Ident,
        proc: Ident,
        subst: Vec<SecTerm>,
        args: Vec<Ident>,
    },
    /// `forward y to x`: provides `offered` by relaying `used`.
    Forward { offered: Ident, used: Ident },
    /// Call of the generated forwarder for type variable `ty`.
    FwdCall { ty: Ident, offered: Ident, used: Ident },
}

impl Proc {
    /// Short description of the head action, for diagnostics.
    pub fn head(&self) -> String {
        match self {
            Proc::Select { chan, label, .. } => format!("select {chan} {label}"),
            Proc::Case { chan, .. } => format!("case {chan}"),
            Proc::Send { payload, chan, .. } => format!("send {payload} to {chan}"),
            Proc::Recv { binder, chan, .. } => format!("{binder} = receive {chan}"),
            Proc::Close { chan } => format!("close {chan}"),
            Proc::Wait { chan, .. } => format!("wait {chan}"),
            Proc::Spawn { binder, proc, .. } => format!("instantiate {binder} = {proc}"),
            Proc::TailCall { chan, proc, .. } => format!("instantiate {chan} = {proc}"),
            Proc::Forward { offered, used } => format!("forward {used} to {offered}"),
            Proc::FwdCall { ty, offered, used } => format!("forwarder<{ty}>({used} to {offered})"),
        }
    }
}

/// `y : A[c, e]`
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ChanDecl {
    pub name: Ident,
    pub ty: SessionType,
    pub sec: SecPair,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ProcDef {
    pub name: Ident,
    pub theory: Ident,
    pub offered: ChanDecl,
    pub params: Vec<ChanDecl>,
    pub at: SecPair,
    pub body: Term,
    pub span: Span,
}

#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Signature {
    pub typedefs: Vec<(Ident, SessionType)>,
    pub procdefs: Vec<ProcDef>,
    /// Machine-generated forwarders, keyed by type name.
    pub forwarders: BTreeMap<Ident, ProcDef>,
    type_index: BTreeMap<Ident, usize>,
    proc_index: BTreeMap<Ident, usize>,
}

impl Signature {
    pub fn new(typedefs: Vec<(Ident, SessionType)>, procdefs: Vec<ProcDef>) -> Self {
        let type_index = typedefs.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
        let proc_index = procdefs.iter().enumerate().map(|(i, d)| (d.name.clone(), i)).collect();
        Signature {
            typedefs,
            procdefs,
            forwarders: BTreeMap::new(),
            type_index,
            proc_index,
        }
    }

    pub fn procdef(&self, name: &str) -> Option<&ProcDef> {
        self.proc_index.get(name).map(|&i| &self.procdefs[i])
    }

    pub fn forwarder(&self, ty: &str) -> Option<&ProcDef> {
        self.forwarders.get(ty)
    }

    pub fn procdef_mut(&mut self, name: &str) -> Option<&mut ProcDef> {
        let i = *self.proc_index.get(name)?;
        Some(&mut self.procdefs[i])
    }
}

impl TypeDefs for Signature {
    fn typedef(&self, name: &str) -> Option<&SessionType> {
        self.type_index.get(name).map(|&i| &self.typedefs[i].1)
    }
}

/// `exec X[c, ...]`
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Exec {
    pub proc: Ident,
    pub subst: Vec<SecTerm>,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Program {
    pub lattice: ConcreteLattice,
    pub theories: Vec<SecurityTheory>,
    pub signature: Signature,
    pub main: Exec,
}

impl Program {
    pub fn level_decls(&self) -> &[LevelDecl] {
        self.lattice.decls()
    }

    pub fn theory(&self, name: &str) -> Option<&SecurityTheory> {
        self.theories.iter().find(|t| t.name.as_str() == name)
    }
}

/// Rewrites every security term occurring in `t` (spawn substitutions).
pub fn map_sec_terms(t: &Term, f: &mut dyn FnMut(&SecTerm) -> Result<SecTerm, SecError>) -> Result<Term, SecError> {
    let p = match &**t {
        Proc::Spawn {
            binder,
            proc,
            subst,
            args,
            cont,
        } => Proc::Spawn {
            binder: binder.clone(),
            proc: proc.clone(),
            subst: subst.iter().map(&mut *f).collect::<Result<_, _>>()?,
            args: args.clone(),
            cont: map_sec_terms(cont, f)?,
        },
        Proc::TailCall {
            chan,
            proc,
            subst,
            args,
        } => Proc::TailCall {
            chan: chan.clone(),
            proc: proc.clone(),
            subst: subst.iter().map(&mut *f).collect::<Result<_, _>>()?,
            args: args.clone(),
        },
        Proc::Select { chan, label, cont } => Proc::Select {
            chan: chan.clone(),
            label: label.clone(),
            cont: map_sec_terms(cont, f)?,
        },
        Proc::Case { chan, branches } => Proc::Case {
            chan: chan.clone(),
            branches: branches
                .iter()
                .map(|(l, b)| Ok((l.clone(), map_sec_terms(b, f)?)))
                .collect::<Result<_, SecError>>()?,
        },
        Proc::Send { payload, chan, cont } => Proc::Send {
            payload: payload.clone(),
            chan: chan.clone(),
            cont: map_sec_terms(cont, f)?,
        },
        Proc::Recv { binder, chan, cont } => Proc::Recv {
            binder: binder.clone(),
            chan: chan.clone(),
            cont: map_sec_terms(cont, f)?,
        },
        Proc::Wait { chan, cont } => Proc::Wait {
            chan: chan.clone(),
            cont: map_sec_terms(cont, f)?,
        },
        Proc::Close { .. } | Proc::Forward { .. } | Proc::FwdCall { .. } => return Ok(t.clone()),
    };
    Ok(Arc::new(p))
}

impl Substitution {
    /// γ̂ lifted to process terms.
    pub fn apply_term(&self, t: &Term) -> Result<Term, SecError> {
        map_sec_terms(t, &mut |s| self.apply(s))
    }
}
