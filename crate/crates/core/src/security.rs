//! Security terms, theories, entailment and substitutions.
//!
//! Entailment is decided by saturation. A term flattens to a set of atoms
//! (variables plus the join of its concrete levels). A theory relation
//! `l ⊑ r` splits by join elimination into Horn clauses "if every atom of
//! `r` is below the goal, so is atom `a`" for each atom `a` of `l`. Closing
//! the atom set of the right-hand side under those clauses and under the
//! lattice order gives exactly the atoms derivably below it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::ident::Ident;
use crate::lattice::{ConcreteLattice, Level};

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SecTerm {
    Level(Ident),
    Var(Ident),
    Join(Box<SecTerm>, Box<SecTerm>),
}

impl SecTerm {
    pub fn level(name: &str) -> Self {
        SecTerm::Level(Ident::new(name))
    }

    pub fn var(name: &str) -> Self {
        SecTerm::Var(Ident::new(name))
    }

    pub fn join(a: SecTerm, b: SecTerm) -> Self {
        if a == b {
            return a;
        }
        SecTerm::Join(Box::new(a), Box::new(b))
    }

    pub fn vars(&self, out: &mut BTreeSet<Ident>) {
        match self {
            SecTerm::Level(_) => {}
            SecTerm::Var(v) => {
                out.insert(v.clone());
            }
            SecTerm::Join(a, b) => {
                a.vars(out);
                b.vars(out);
            }
        }
    }

    pub fn is_concrete(&self) -> bool {
        match self {
            SecTerm::Level(_) => true,
            SecTerm::Var(_) => false,
            SecTerm::Join(a, b) => a.is_concrete() && b.is_concrete(),
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, hash: bool) -> fmt::Result {
        match self {
            SecTerm::Level(l) if hash => write!(f, "#{l}"),
            SecTerm::Level(l) => write!(f, "{l}"),
            SecTerm::Var(v) => write!(f, "{v}"),
            SecTerm::Join(a, b) => {
                a.fmt_prec(f, hash)?;
                f.write_str(if hash { " |_| " } else { " ⊔ " })?;
                b.fmt_prec(f, hash)
            }
        }
    }

    /// Concrete-syntax rendering (`#alice |_| psi`).
    pub fn source(&self) -> String {
        struct S<'a>(&'a SecTerm);
        impl fmt::Display for S<'_> {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt_prec(f, true)
            }
        }
        S(self).to_string()
    }
}

/// Mathematical rendering used in diagnostics (`alice ⊔ psi`).
impl fmt::Display for SecTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, false)
    }
}

impl fmt::Debug for SecTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// Confidentiality / integrity pair ⟨c, e⟩.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SecPair {
    pub conf: SecTerm,
    pub integ: SecTerm,
}

impl SecPair {
    pub fn new(conf: SecTerm, integ: SecTerm) -> Self {
        SecPair { conf, integ }
    }

    pub fn same(t: SecTerm) -> Self {
        SecPair {
            conf: t.clone(),
            integ: t,
        }
    }

    pub fn join(&self, other: &SecPair) -> SecPair {
        SecPair {
            conf: SecTerm::join(self.conf.clone(), other.conf.clone()),
            integ: SecTerm::join(self.integ.clone(), other.integ.clone()),
        }
    }
}

impl fmt::Display for SecPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "⟨{}, {}⟩", self.conf, self.integ)
    }
}

impl fmt::Debug for SecPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Relation {
    pub lhs: SecTerm,
    pub rhs: SecTerm,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SecurityTheory {
    pub name: Ident,
    pub vars: Vec<Ident>,
    pub relations: Vec<Relation>,
}

impl SecurityTheory {
    pub fn empty(name: &str) -> Self {
        SecurityTheory {
            name: Ident::new(name),
            vars: Vec::new(),
            relations: Vec::new(),
        }
    }

    pub fn has_var(&self, v: &str) -> bool {
        self.vars.iter().any(|x| x.as_str() == v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SecError {
    #[error("unknown security variable `{0}`")]
    UnknownVariable(Ident),
    #[error("unknown security level `#{0}`")]
    UnknownLevel(Ident),
    #[error("substitution does not cover variable `{0}`")]
    PartialSubstitution(Ident),
    #[error("theory `{0}` has more than 64 variables")]
    TooManyVariables(Ident),
    #[error("theory `{theory}` takes {expected} terms, {found} given")]
    Arity {
        theory: Ident,
        expected: usize,
        found: usize,
    },
}

/// Normal form of a term: an optional concrete level plus a set of variables.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
struct Atoms {
    level: Option<Level>,
    vars: u64,
}

impl Atoms {
    fn union(self, o: Atoms, lat: &ConcreteLattice) -> Atoms {
        let level = match (self.level, o.level) {
            (Some(a), Some(b)) => Some(lat.join(a, b)),
            (a, b) => a.or(b),
        };
        Atoms {
            level,
            vars: self.vars | o.vars,
        }
    }

    /// Every atom of `self` is in the closed set `c`.
    fn within(self, c: Atoms, lat: &ConcreteLattice) -> bool {
        if self.vars & !c.vars != 0 {
            return false;
        }
        match (self.level, c.level) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some(a), Some(b)) => lat.leq(a, b),
        }
    }
}

#[derive(Clone, Debug)]
struct Clause {
    lhs: Atoms,
    rhs: Atoms,
}

/// Decision procedure for `Ψ ⊩ c ⊑ d` over a fixed theory and lattice.
#[derive(Clone, Debug)]
pub struct Entailer<'a> {
    lat: &'a ConcreteLattice,
    theory: &'a SecurityTheory,
    var_index: BTreeMap<Ident, u32>,
    clauses: Vec<Clause>,
}

impl<'a> Entailer<'a> {
    pub fn new(theory: &'a SecurityTheory, lat: &'a ConcreteLattice) -> Result<Self, SecError> {
        if theory.vars.len() > 64 {
            return Err(SecError::TooManyVariables(theory.name.clone()));
        }
        let var_index = theory
            .vars
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i as u32))
            .collect();
        let mut e = Entailer {
            lat,
            theory,
            var_index,
            clauses: Vec::new(),
        };
        let mut clauses = Vec::new();
        for r in &theory.relations {
            let l = e.atoms(&r.lhs)?;
            let rhs = e.atoms(&r.rhs)?;
            // Join elimination: one clause per lhs atom.
            if l.level.is_some() {
                clauses.push(Clause {
                    lhs: Atoms {
                        level: l.level,
                        vars: 0,
                    },
                    rhs,
                });
            }
            let mut bits = l.vars;
            while bits != 0 {
                let b = bits.trailing_zeros();
                clauses.push(Clause {
                    lhs: Atoms {
                        level: None,
                        vars: 1 << b,
                    },
                    rhs,
                });
                bits &= bits - 1;
            }
        }
        e.clauses = clauses;
        Ok(e)
    }

    pub fn lattice(&self) -> &'a ConcreteLattice {
        self.lat
    }

    pub fn theory(&self) -> &'a SecurityTheory {
        self.theory
    }

    fn atoms(&self, t: &SecTerm) -> Result<Atoms, SecError> {
        match t {
            SecTerm::Level(n) => {
                let l = self.lat.level(n).ok_or_else(|| SecError::UnknownLevel(n.clone()))?;
                Ok(Atoms {
                    level: Some(l),
                    vars: 0,
                })
            }
            SecTerm::Var(v) => {
                let i = self
                    .var_index
                    .get(v)
                    .ok_or_else(|| SecError::UnknownVariable(v.clone()))?;
                Ok(Atoms {
                    level: None,
                    vars: 1 << i,
                })
            }
            SecTerm::Join(a, b) => Ok(self.atoms(a)?.union(self.atoms(b)?, self.lat)),
        }
    }

    fn closure(&self, start: Atoms) -> Atoms {
        let mut cur = start;
        loop {
            let mut changed = false;
            for c in &self.clauses {
                if !c.lhs.within(cur, self.lat) && c.rhs.within(cur, self.lat) {
                    cur = cur.union(c.lhs, self.lat);
                    changed = true;
                }
            }
            if !changed {
                return cur;
            }
        }
    }

    pub fn entails(&self, lhs: &SecTerm, rhs: &SecTerm) -> Result<bool, SecError> {
        let l = self.atoms(lhs)?;
        let r = self.atoms(rhs)?;
        if l.within(r, self.lat) {
            return Ok(true);
        }
        Ok(l.within(self.closure(r), self.lat))
    }

    pub fn entails_eq(&self, a: &SecTerm, b: &SecTerm) -> Result<bool, SecError> {
        Ok(self.entails(a, b)? && self.entails(b, a)?)
    }

    /// Componentwise `⟨a, b⟩ ⊑ ⟨c, d⟩`.
    pub fn pair_leq(&self, p: &SecPair, q: &SecPair) -> Result<bool, SecError> {
        Ok(self.entails(&p.conf, &q.conf)? && self.entails(&p.integ, &q.integ)?)
    }

    pub fn pair_eq(&self, p: &SecPair, q: &SecPair) -> Result<bool, SecError> {
        Ok(self.pair_leq(p, q)? && self.pair_leq(q, p)?)
    }

    /// Checks that every variable of `t` is declared.
    pub fn well_scoped(&self, t: &SecTerm) -> Result<(), SecError> {
        self.atoms(t).map(|_| ())
    }

    /// Evaluates a variable-free term to its level.
    pub fn eval_concrete(&self, t: &SecTerm) -> Result<Option<Level>, SecError> {
        let a = self.atoms(t)?;
        Ok(if a.vars == 0 { a.level } else { None })
    }
}

pub fn entails(theory: &SecurityTheory, lat: &ConcreteLattice, lhs: &SecTerm, rhs: &SecTerm) -> Result<bool, SecError> {
    Entailer::new(theory, lat)?.entails(lhs, rhs)
}

pub fn entails_eq(
    theory: &SecurityTheory,
    lat: &ConcreteLattice,
    lhs: &SecTerm,
    rhs: &SecTerm,
) -> Result<bool, SecError> {
    Entailer::new(theory, lat)?.entails_eq(lhs, rhs)
}

/// γ: variables of a source theory mapped to terms over a target theory.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Substitution {
    pub map: BTreeMap<Ident, SecTerm>,
}

impl fmt::Debug for Substitution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.map.iter()).finish()
    }
}

impl Substitution {
    pub fn identity(theory: &SecurityTheory) -> Self {
        Substitution {
            map: theory
                .vars
                .iter()
                .map(|v| (v.clone(), SecTerm::Var(v.clone())))
                .collect(),
        }
    }

    /// Positional substitution for the variables of `theory`.
    pub fn positional(theory: &SecurityTheory, terms: &[SecTerm]) -> Result<Self, SecError> {
        if let Some(v) = theory.vars.get(terms.len()) {
            return Err(SecError::PartialSubstitution(v.clone()));
        }
        Ok(Substitution {
            map: theory.vars.iter().cloned().zip(terms.iter().cloned()).collect(),
        })
    }

    pub fn from_pairs(pairs: &[(&str, SecTerm)]) -> Self {
        Substitution {
            map: pairs.iter().map(|(k, v)| (Ident::new(k), v.clone())).collect(),
        }
    }

    pub fn apply(&self, t: &SecTerm) -> Result<SecTerm, SecError> {
        match t {
            SecTerm::Level(_) => Ok(t.clone()),
            SecTerm::Var(v) => self
                .map
                .get(v)
                .cloned()
                .ok_or_else(|| SecError::PartialSubstitution(v.clone())),
            SecTerm::Join(a, b) => Ok(SecTerm::Join(Box::new(self.apply(a)?), Box::new(self.apply(b)?))),
        }
    }

    pub fn apply_pair(&self, p: &SecPair) -> Result<SecPair, SecError> {
        Ok(SecPair {
            conf: self.apply(&p.conf)?,
            integ: self.apply(&p.integ)?,
        })
    }

    /// `(self ∘ inner)(v) = self̂(inner(v))`.
    pub fn compose(&self, inner: &Substitution) -> Result<Substitution, SecError> {
        let mut map = BTreeMap::new();
        for (k, t) in &inner.map {
            map.insert(k.clone(), self.apply(t)?);
        }
        Ok(Substitution { map })
    }
}

/// `Ψ ⊩ γ : Ψ′` with `source = Ψ′` (the domain of γ) and `target = Ψ`:
/// every relation of the source must become derivable in the target.
pub fn check_substitution(
    source: &SecurityTheory,
    target: &SecurityTheory,
    lat: &ConcreteLattice,
    gamma: &Substitution,
) -> Result<bool, SecError> {
    for v in &source.vars {
        if !gamma.map.contains_key(v) {
            return Err(SecError::PartialSubstitution(v.clone()));
        }
    }
    let ent = Entailer::new(target, lat)?;
    for r in &source.relations {
        let l = gamma.apply(&r.lhs)?;
        let rr = gamma.apply(&r.rhs)?;
        if !ent.entails(&l, &rr)? {
            return Ok(false);
        }
    }
    Ok(true)
}
