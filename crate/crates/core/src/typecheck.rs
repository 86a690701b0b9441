//! Process typing `Ψ; Δ ⊢ P @⟨c₀,e₀⟩ :: x:A⟨c,e⟩` and signature checking.
//!
//! The rules are syntax-directed on the head of the term and on whether the
//! channel acted on is the offered one (right rules) or comes from Δ (left
//! rules). The only choice points, `⊕R₁/⊕R₂` and `&L₁/&L₂`, are decided by
//! asking whether `c = e` is derivable.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::ast::{ChanDecl, Proc, ProcDef, Program, Signature, Span, Term};
use crate::desugar::{expand_tail_call, Fresh};
use crate::ident::Ident;
use crate::lattice::ConcreteLattice;
use crate::security::{check_substitution, Entailer, SecError, SecPair, SecTerm, SecurityTheory};
use crate::synccheck::{lookup_proc, lookup_theory, resolve_subst, SyncCx, SyncEnv, SyncError};
use crate::types::{contractive_check, type_equal, unfold_head, well_formed, SessionType, TypeDefError};

/// Linear context Δ.
pub type Ctx = BTreeMap<Ident, (SessionType, SecPair)>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CheckOptions {
    /// Admits programs whose branches violate synchronization patterns.
    /// Only meant for demonstrating leaks.
    pub skip_sync: bool,
    /// Relates every pair of branches instead of one representative.
    pub exhaustive_pairs: bool,
}

/// Where an error arose: the definition, its source position, and the head
/// of the offending subterm.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Loc {
    pub def: Ident,
    pub span: Span,
    pub head: String,
}

impl fmt::Display for Loc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "in `{}` ({}) at `{}`", self.def, self.span, self.head)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeError {
    #[error("{at}: rule {rule}: {premise}")]
    FlowViolation {
        at: Loc,
        rule: &'static str,
        premise: String,
    },
    #[error("{at}: rule {rule}: branches `{}` and `{}` have different types while Ψ ⊮ {pair}", .labels.0, .labels.1)]
    BranchTypeMismatch {
        at: Loc,
        rule: &'static str,
        labels: (Ident, Ident),
        pair: String,
    },
    #[error("{at}: rule {rule}: branches `{}` and `{}` are not synchronized: {sync}", .labels.0, .labels.1)]
    SyncPatternViolation {
        at: Loc,
        rule: &'static str,
        labels: (Ident, Ident),
        sync: SyncError,
    },
    #[error("{at}: {msg}")]
    LinearityError { at: Loc, msg: String },
    #[error("{at}: spawn of `{proc}`: {msg}")]
    SpawnSubstitutionError { at: Loc, proc: Ident, msg: String },
    #[error("{at}: rule Fwd: {premise}")]
    ForwardSecurityMismatch { at: Loc, premise: String },
    #[error("{at}: {msg}")]
    TypeMismatch { at: Loc, msg: String },
    #[error("{at}: unknown process `{name}`")]
    UnknownProcess { at: Loc, name: Ident },
    #[error("definition `{def}` refers to unknown theory `{name}`")]
    UnknownTheory { def: Ident, name: Ident },
    #[error("in `{def}`: {source}")]
    Sec { def: Ident, source: SecError },
    #[error(transparent)]
    TypeDef(#[from] TypeDefError),
    #[error("exec: `{var}` is mapped to `{term}`, which is not a concrete level")]
    SubstitutionNotConcrete { var: Ident, term: String },
    #[error("exec: substitution for `{proc}` breaks {relation}")]
    SubstitutionNotOrderPreserving { proc: Ident, relation: String },
    #[error("{at}: presupposition violated: {premise}")]
    PresuppositionViolation { at: Loc, premise: String },
}

impl TypeError {
    /// Stable class name, used by diagnostics and the corpus expectations.
    pub fn kind(&self) -> &'static str {
        match self {
            TypeError::FlowViolation { .. } => "FlowViolation",
            TypeError::BranchTypeMismatch { .. } => "BranchTypeMismatch",
            TypeError::SyncPatternViolation { .. } => "SyncPatternViolation",
            TypeError::LinearityError { .. } => "LinearityError",
            TypeError::SpawnSubstitutionError { .. } => "SpawnSubstitutionError",
            TypeError::ForwardSecurityMismatch { .. } => "ForwardSecurityMismatch",
            TypeError::TypeMismatch { .. } => "TypeMismatch",
            TypeError::UnknownProcess { .. } => "UnknownProcess",
            TypeError::UnknownTheory { .. } => "UnknownTheory",
            TypeError::Sec { .. } => "SecurityTermError",
            TypeError::TypeDef(_) => "TypeDefError",
            TypeError::SubstitutionNotConcrete { .. } => "SubstitutionNotConcrete",
            TypeError::SubstitutionNotOrderPreserving { .. } => "SubstitutionNotOrderPreserving",
            TypeError::PresuppositionViolation { .. } => "PresuppositionViolation",
        }
    }

    /// Name of the typing rule whose premise failed, when there is one.
    pub fn rule(&self) -> Option<&str> {
        match self {
            TypeError::FlowViolation { rule, .. }
            | TypeError::BranchTypeMismatch { rule, .. }
            | TypeError::SyncPatternViolation { rule, .. } => Some(rule),
            TypeError::ForwardSecurityMismatch { .. } => Some("Fwd"),
            TypeError::SpawnSubstitutionError { .. } => Some("Spawn"),
            _ => None,
        }
    }

    pub fn loc(&self) -> Option<&Loc> {
        match self {
            TypeError::FlowViolation { at, .. }
            | TypeError::BranchTypeMismatch { at, .. }
            | TypeError::SyncPatternViolation { at, .. }
            | TypeError::LinearityError { at, .. }
            | TypeError::SpawnSubstitutionError { at, .. }
            | TypeError::ForwardSecurityMismatch { at, .. }
            | TypeError::TypeMismatch { at, .. }
            | TypeError::UnknownProcess { at, .. }
            | TypeError::PresuppositionViolation { at, .. } => Some(at),
            _ => None,
        }
    }
}

/// The global parts of a program every judgment is relative to.
#[derive(Clone, Copy)]
pub struct Env<'p> {
    pub sig: &'p Signature,
    pub theories: &'p [SecurityTheory],
    pub lat: &'p ConcreteLattice,
}

impl<'p> Env<'p> {
    pub fn of(p: &'p Program) -> Self {
        Env {
            sig: &p.signature,
            theories: &p.theories,
            lat: &p.lattice,
        }
    }
}

/// One typing judgment to be decided.
#[derive(Clone, Debug)]
pub struct Judgment {
    pub def: Ident,
    pub span: Span,
    pub theory: SecurityTheory,
    pub ctx: Ctx,
    pub term: Term,
    pub running: SecPair,
    pub offered: ChanDecl,
}

fn not_leq(a: &dyn fmt::Display, b: &dyn fmt::Display) -> String {
    format!("Ψ ⊮ {a} ⊑ {b}")
}

struct Cx<'a> {
    env: Env<'a>,
    theory: &'a SecurityTheory,
    ent: Entailer<'a>,
    opts: CheckOptions,
    def: Ident,
    span: Span,
    fresh: Fresh,
    fuel: usize,
    sites: Option<&'a RefCell<Vec<SyncSite>>>,
}

/// One branching point the synchronization check is asked about.
#[derive(Clone, Debug)]
pub struct SyncSite {
    pub def: Ident,
    pub theory: SecurityTheory,
    pub env: SyncEnv,
    pub branches: Vec<(Ident, Term)>,
    pub d: SecTerm,
    pub f: SecTerm,
}

impl<'a> Cx<'a> {
    fn at(&self, t: &Proc) -> Loc {
        Loc {
            def: self.def.clone(),
            span: self.span,
            head: t.head(),
        }
    }

    fn sec(&self, e: SecError) -> TypeError {
        TypeError::Sec {
            def: self.def.clone(),
            source: e,
        }
    }

    fn entails(&self, a: &SecTerm, b: &SecTerm) -> Result<bool, TypeError> {
        self.ent.entails(a, b).map_err(|e| self.sec(e))
    }

    fn leq(&self, rule: &'static str, t: &Proc, a: &SecTerm, b: &SecTerm) -> Result<(), TypeError> {
        if self.entails(a, b)? {
            Ok(())
        } else {
            Err(TypeError::FlowViolation {
                at: self.at(t),
                rule,
                premise: not_leq(a, b),
            })
        }
    }

    fn pair_leq(&self, rule: &'static str, t: &Proc, p: &SecPair, q: &SecPair) -> Result<(), TypeError> {
        if self.ent.pair_leq(p, q).map_err(|e| self.sec(e))? {
            Ok(())
        } else {
            Err(TypeError::FlowViolation {
                at: self.at(t),
                rule,
                premise: not_leq(p, q),
            })
        }
    }

    fn pair_eq(&self, p: &SecPair, q: &SecPair) -> Result<bool, TypeError> {
        self.ent.pair_eq(p, q).map_err(|e| self.sec(e))
    }

    fn unfold(&self, t: &SessionType, at: &Proc) -> Result<SessionType, TypeError> {
        unfold_head(self.env.sig, t, self.fuel)
            .cloned()
            .map_err(|e| TypeError::TypeMismatch {
                at: self.at(at),
                msg: e.to_string(),
            })
    }

    fn mismatch(&self, t: &Proc, chan: &Ident, expected: &str, found: &SessionType) -> TypeError {
        TypeError::TypeMismatch {
            at: self.at(t),
            msg: format!("`{chan}` has type {found}, expected {expected}"),
        }
    }

    fn linear(&self, t: &Proc, msg: String) -> TypeError {
        TypeError::LinearityError { at: self.at(t), msg }
    }

    fn take(&self, delta: &mut Ctx, t: &Proc, x: &Ident) -> Result<(SessionType, SecPair), TypeError> {
        delta
            .remove(x)
            .ok_or_else(|| self.linear(t, format!("channel `{x}` is not available")))
    }

    fn fresh_binder(&self, delta: &Ctx, offered: &Ident, t: &Proc, b: &Ident) -> Result<(), TypeError> {
        if delta.contains_key(b) || b == offered {
            return Err(self.linear(t, format!("binder `{b}` shadows a channel in scope")));
        }
        Ok(())
    }

    /// ∀i,j. A_i = A_j, required when the branch taken may not be observed.
    fn uniform_branches(
        &self,
        rule: &'static str,
        t: &Proc,
        bs: &[(Ident, SessionType)],
        pair: &SecPair,
    ) -> Result<(), TypeError> {
        for (l, a) in &bs[1..] {
            if !type_equal(self.env.sig, &bs[0].1, a) {
                return Err(TypeError::BranchTypeMismatch {
                    at: self.at(t),
                    rule,
                    labels: (bs[0].0.clone(), l.clone()),
                    pair: format!("{} = {}", pair.conf, pair.integ),
                });
            }
        }
        Ok(())
    }

    fn sync_env(delta: &Ctx, x: &Ident, xp: &SecPair) -> SyncEnv {
        let mut env = SyncEnv::new();
        env.insert(x.clone(), 0, xp.clone());
        for (i, (n, (_, p))) in delta.iter().enumerate() {
            env.insert(n.clone(), i as u32 + 1, p.clone());
        }
        env
    }

    fn sync(
        &self,
        rule: &'static str,
        t: &Proc,
        env: &SyncEnv,
        branches: &[(Ident, Term)],
        d: &SecTerm,
        f: &SecTerm,
    ) -> Result<(), TypeError> {
        if let Some(sites) = self.sites {
            sites.borrow_mut().push(SyncSite {
                def: self.def.clone(),
                theory: self.theory.clone(),
                env: env.clone(),
                branches: branches.to_vec(),
                d: d.clone(),
                f: f.clone(),
            });
        }
        if self.opts.skip_sync {
            return Ok(());
        }
        let mut cx = SyncCx::new(&self.ent, self.env.sig, self.env.theories, self.opts.exhaustive_pairs);
        cx.sync_branches(env, branches, d, f)
            .map_err(|(a, b, e)| TypeError::SyncPatternViolation {
                at: self.at(t),
                rule,
                labels: (a, b),
                sync: e,
            })
    }

    fn check_labels(&self, t: &Proc, bs: &[(Ident, SessionType)], branches: &[(Ident, Term)]) -> Result<(), TypeError> {
        let want: BTreeSet<&Ident> = bs.iter().map(|(l, _)| l).collect();
        let got: BTreeSet<&Ident> = branches.iter().map(|(l, _)| l).collect();
        if want != got || branches.len() != bs.len() {
            let show = |s: &BTreeSet<&Ident>| s.iter().map(|l| l.as_str()).collect::<Vec<_>>().join(", ");
            return Err(TypeError::TypeMismatch {
                at: self.at(t),
                msg: format!("case covers {{{}}} but the type has {{{}}}", show(&got), show(&want)),
            });
        }
        Ok(())
    }

    /// Δ ⊢ t @ run :: x : a⟨xp⟩
    fn check(
        &mut self,
        mut delta: Ctx,
        t: &Term,
        run: &SecPair,
        x: &Ident,
        a: &SessionType,
        xp: &SecPair,
    ) -> Result<(), TypeError> {
        let p: &Proc = t;
        match p {
            Proc::TailCall {
                chan,
                proc,
                subst,
                args,
            } => {
                let z = self.fresh.name(chan);
                let e: Term = Arc::new(expand_tail_call(chan, z, proc, subst, args));
                self.check(delta, &e, run, x, a, xp)
            }
            Proc::Select { chan, label, cont } if chan == x => {
                let ua = self.unfold(a, p)?;
                let SessionType::Plus(bs) = &ua else {
                    return Err(self.mismatch(p, chan, "an internal choice", &ua));
                };
                let Some(ak) = ua.branch(label) else {
                    return Err(self.mismatch(p, chan, &format!("a choice with label `{label}`"), &ua));
                };
                if !self.ent.entails_eq(&xp.conf, &xp.integ).map_err(|e| self.sec(e))? {
                    self.uniform_branches("⊕R₂", p, bs, xp)?;
                }
                let ak = ak.clone();
                self.check(delta, cont, run, x, &ak, xp)
            }
            Proc::Select { chan, label, cont } => {
                let (ty, cp) = self.take(&mut delta, p, chan)?;
                let ut = self.unfold(&ty, p)?;
                let SessionType::With(bs) = &ut else {
                    return Err(self.mismatch(p, chan, "an external choice", &ut));
                };
                let Some(ak) = ut.branch(label) else {
                    return Err(self.mismatch(p, chan, &format!("a choice with label `{label}`"), &ut));
                };
                let eq = self.ent.entails_eq(&cp.conf, &cp.integ).map_err(|e| self.sec(e))?;
                let rule = if eq { "&L₁" } else { "&L₂" };
                if !eq {
                    self.uniform_branches(rule, p, bs, &cp)?;
                }
                self.pair_leq(rule, p, run, &cp)?;
                delta.insert(chan.clone(), (ak.clone(), cp));
                self.check(delta, cont, run, x, a, xp)
            }
            Proc::Case { chan, branches } if chan == x => {
                let ua = self.unfold(a, p)?;
                let SessionType::With(bs) = &ua else {
                    return Err(self.mismatch(p, chan, "an external choice", &ua));
                };
                self.check_labels(p, bs, branches)?;
                for (l, body) in branches {
                    let ak = ua.branch(l).expect("labels checked").clone();
                    self.check(delta.clone(), body, xp, x, &ak, xp)?;
                }
                let env = Self::sync_env(&delta, x, xp);
                self.sync("&R", p, &env, branches, &xp.conf, &xp.integ)
            }
            Proc::Case { chan, branches } => {
                let (ty, cp) = self.take(&mut delta, p, chan)?;
                let ut = self.unfold(&ty, p)?;
                let SessionType::Plus(bs) = &ut else {
                    return Err(self.mismatch(p, chan, "an internal choice", &ut));
                };
                self.check_labels(p, bs, branches)?;
                let run1 = cp.join(run);
                for (l, body) in branches {
                    let mut d1 = delta.clone();
                    d1.insert(
                        chan.clone(),
                        (ut.branch(l).expect("labels checked").clone(), cp.clone()),
                    );
                    self.check(d1, body, &run1, x, a, xp)?;
                }
                let mut env_delta = delta.clone();
                env_delta.insert(chan.clone(), (SessionType::One, cp));
                let env = Self::sync_env(&env_delta, x, xp);
                self.sync("⊕L", p, &env, branches, &run1.conf, &run1.integ)
            }
            Proc::Send { payload, chan, cont } if chan == x => {
                let ua = self.unfold(a, p)?;
                let SessionType::Tensor(pa, pb) = &ua else {
                    return Err(self.mismatch(p, chan, "a channel output", &ua));
                };
                let (yt, yp) = self.take(&mut delta, p, payload)?;
                if !type_equal(self.env.sig, &yt, pa) {
                    return Err(self.mismatch(p, payload, &pa.to_string(), &yt));
                }
                if !self.pair_eq(&yp, xp)? {
                    return Err(TypeError::FlowViolation {
                        at: self.at(p),
                        rule: "⊗R",
                        premise: format!("Ψ ⊮ {yp} = {xp}"),
                    });
                }
                let b = (**pb).clone();
                self.check(delta, cont, run, x, &b, xp)
            }
            Proc::Send { payload, chan, cont } => {
                let (ty, cp) = self.take(&mut delta, p, chan)?;
                let ut = self.unfold(&ty, p)?;
                let SessionType::Lolli(pa, pb) = &ut else {
                    return Err(self.mismatch(p, chan, "a channel input", &ut));
                };
                self.pair_leq("⊸L", p, run, &cp)?;
                let (yt, yp) = self.take(&mut delta, p, payload)?;
                if !type_equal(self.env.sig, &yt, pa) {
                    return Err(self.mismatch(p, payload, &pa.to_string(), &yt));
                }
                if !self.pair_eq(&yp, &cp)? {
                    return Err(TypeError::FlowViolation {
                        at: self.at(p),
                        rule: "⊸L",
                        premise: format!("Ψ ⊮ {yp} = {cp}"),
                    });
                }
                delta.insert(chan.clone(), ((**pb).clone(), cp));
                self.check(delta, cont, run, x, a, xp)
            }
            Proc::Recv { binder, chan, cont } if chan == x => {
                let ua = self.unfold(a, p)?;
                let SessionType::Lolli(pa, pb) = &ua else {
                    return Err(self.mismatch(p, chan, "a channel input", &ua));
                };
                self.fresh_binder(&delta, x, p, binder)?;
                delta.insert(binder.clone(), ((**pa).clone(), xp.clone()));
                let b = (**pb).clone();
                self.check(delta, cont, xp, x, &b, xp)
            }
            Proc::Recv { binder, chan, cont } => {
                let (ty, cp) = self.take(&mut delta, p, chan)?;
                let ut = self.unfold(&ty, p)?;
                let SessionType::Tensor(pa, pb) = &ut else {
                    return Err(self.mismatch(p, chan, "a channel output", &ut));
                };
                self.fresh_binder(&delta, x, p, binder)?;
                if binder == chan {
                    return Err(self.linear(p, format!("binder `{binder}` shadows a channel in scope")));
                }
                let run1 = cp.join(run);
                delta.insert(chan.clone(), ((**pb).clone(), cp.clone()));
                delta.insert(binder.clone(), ((**pa).clone(), cp));
                self.check(delta, cont, &run1, x, a, xp)
            }
            Proc::Close { chan } => {
                if chan != x {
                    return Err(self.linear(p, format!("`close {chan}` on a channel this process does not offer")));
                }
                let ua = self.unfold(a, p)?;
                if ua != SessionType::One {
                    return Err(self.mismatch(p, chan, "unit", &ua));
                }
                if let Some(y) = delta.keys().next() {
                    return Err(self.linear(p, format!("channel `{y}` is never used")));
                }
                Ok(())
            }
            Proc::Wait { chan, cont } => {
                let (ty, cp) = self.take(&mut delta, p, chan)?;
                let ut = self.unfold(&ty, p)?;
                if ut != SessionType::One {
                    return Err(self.mismatch(p, chan, "unit", &ut));
                }
                let run1 = cp.join(run);
                self.check(delta, cont, &run1, x, a, xp)
            }
            Proc::Forward { offered, used } => self.check_forward(delta, p, offered, used, x, a, xp, None),
            Proc::FwdCall { ty, offered, used } => self.check_forward(delta, p, offered, used, x, a, xp, Some(ty)),
            Proc::Spawn {
                binder,
                proc,
                subst,
                args,
                cont,
            } => {
                let (binder_ty, binder_pair) = self.check_spawn(&mut delta, p, proc, subst, args, run, xp)?;
                self.fresh_binder(&delta, x, p, binder)?;
                delta.insert(binder.clone(), (binder_ty, binder_pair));
                self.check(delta, cont, run, x, a, xp)
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn check_forward(
        &self,
        mut delta: Ctx,
        p: &Proc,
        offered: &Ident,
        used: &Ident,
        x: &Ident,
        a: &SessionType,
        xp: &SecPair,
        via: Option<&Ident>,
    ) -> Result<(), TypeError> {
        if offered != x {
            return Err(self.linear(p, format!("forward to `{offered}`, which this process does not offer")));
        }
        let (ut, up) = self.take(&mut delta, p, used)?;
        if let Some(y) = delta.keys().next() {
            return Err(self.linear(p, format!("channel `{y}` is never used")));
        }
        if !self.pair_eq(&up, xp)? {
            return Err(TypeError::ForwardSecurityMismatch {
                at: self.at(p),
                premise: format!("Ψ ⊮ {up} = {xp}"),
            });
        }
        if !type_equal(self.env.sig, &ut, a) {
            return Err(self.mismatch(p, used, &a.to_string(), &ut));
        }
        if let Some(ty) = via {
            let v = SessionType::Var(ty.clone());
            if self.env.sig.forwarder(ty).is_none() || !type_equal(self.env.sig, &v, a) {
                return Err(self.mismatch(p, offered, &format!("forwarded type {ty}"), a));
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn check_spawn(
        &self,
        delta: &mut Ctx,
        p: &Proc,
        proc: &Ident,
        subst: &[SecTerm],
        args: &[Ident],
        run: &SecPair,
        xp: &SecPair,
    ) -> Result<(SessionType, SecPair), TypeError> {
        let serr = |msg: String| TypeError::SpawnSubstitutionError {
            at: self.at(p),
            proc: proc.clone(),
            msg,
        };
        let def: &ProcDef = lookup_proc(self.env.sig, proc).ok_or_else(|| TypeError::UnknownProcess {
            at: self.at(p),
            name: proc.clone(),
        })?;
        let th = lookup_theory(self.env.theories, def.theory.as_str()).ok_or_else(|| TypeError::UnknownTheory {
            def: def.name.clone(),
            name: def.theory.clone(),
        })?;
        for s in subst {
            self.ent.well_scoped(s).map_err(|e| serr(e.to_string()))?;
        }
        let gamma = resolve_subst(th, self.theory, subst).map_err(|e| serr(e.to_string()))?;
        match check_substitution(th, self.theory, self.env.lat, &gamma) {
            Ok(true) => {}
            Ok(false) => {
                return Err(serr(format!(
                    "substitution {gamma:?} is not order-preserving from `{}` into `{}`",
                    th.name, self.theory.name
                )))
            }
            Err(e) => return Err(serr(e.to_string())),
        }
        if args.len() != def.params.len() {
            return Err(serr(format!(
                "expects {} channels, {} given",
                def.params.len(),
                args.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for (arg, param) in args.iter().zip(&def.params) {
            if !seen.insert(arg) {
                return Err(self.linear(p, format!("channel `{arg}` passed twice")));
            }
            let (at, ap) = self.take(delta, p, arg)?;
            if !type_equal(self.env.sig, &at, &param.ty) {
                return Err(self.mismatch(p, arg, &param.ty.to_string(), &at));
            }
            let want = gamma.apply_pair(&param.sec).map_err(|e| serr(e.to_string()))?;
            if !self.pair_eq(&ap, &want)? {
                return Err(TypeError::FlowViolation {
                    at: self.at(p),
                    rule: "Spawn",
                    premise: format!("Ψ ⊮ {ap} = {want} for argument `{arg}`"),
                });
            }
        }
        let sp = gamma.apply_pair(&def.offered.sec).map_err(|e| serr(e.to_string()))?;
        let s0 = gamma.apply_pair(&def.at).map_err(|e| serr(e.to_string()))?;
        self.pair_leq("Spawn", p, &sp, xp)?;
        self.leq("Spawn", p, &run.integ, &s0.conf)?;
        self.leq("Spawn", p, &run.integ, &s0.integ)?;
        Ok((def.offered.ty.clone(), sp))
    }

    fn presuppositions(&self, j: &Judgment) -> Result<(), TypeError> {
        let (r, o) = (&j.running, &j.offered.sec);
        let checks: [(&SecTerm, &SecTerm); 4] = [
            (&r.integ, &r.conf),
            (&r.conf, &o.conf),
            (&r.integ, &o.integ),
            (&o.integ, &o.conf),
        ];
        let at = Loc {
            def: self.def.clone(),
            span: self.span,
            head: j.term.head(),
        };
        for (a, b) in checks {
            if !self.entails(a, b)? {
                return Err(TypeError::PresuppositionViolation {
                    at,
                    premise: not_leq(a, b),
                });
            }
        }
        for (y, (_, p)) in &j.ctx {
            for (a, b) in [(&p.conf, &o.conf), (&p.integ, &o.integ)] {
                if !self.entails(a, b)? {
                    return Err(TypeError::PresuppositionViolation {
                        at,
                        premise: format!("{} for `{y}`", not_leq(a, b)),
                    });
                }
            }
        }
        Ok(())
    }
}

fn cx<'a>(
    env: Env<'a>,
    theory: &'a SecurityTheory,
    def: &Ident,
    span: Span,
    opts: CheckOptions,
) -> Result<Cx<'a>, TypeError> {
    let ent = Entailer::new(theory, env.lat).map_err(|e| TypeError::Sec {
        def: def.clone(),
        source: e,
    })?;
    Ok(Cx {
        env,
        theory,
        ent,
        opts,
        def: def.clone(),
        span,
        fresh: Fresh::new(),
        fuel: env.sig.typedefs.len() + 1,
        sites: None,
    })
}

/// Decides one judgment, after checking its presuppositions.
pub fn check_process(env: Env<'_>, j: &Judgment, opts: CheckOptions) -> Result<(), TypeError> {
    let mut c = cx(env, &j.theory, &j.def, j.span, opts)?;
    c.presuppositions(j)?;
    c.check(
        j.ctx.clone(),
        &j.term,
        &j.running,
        &j.offered.name,
        &j.offered.ty,
        &j.offered.sec,
    )
}

/// The judgment a definition's body must satisfy.
pub fn definition_judgment(env: Env<'_>, d: &ProcDef) -> Result<Judgment, TypeError> {
    let theory = lookup_theory(env.theories, d.theory.as_str()).ok_or_else(|| TypeError::UnknownTheory {
        def: d.name.clone(),
        name: d.theory.clone(),
    })?;
    let mut ctx = Ctx::new();
    for p in &d.params {
        if ctx.insert(p.name.clone(), (p.ty.clone(), p.sec.clone())).is_some() || p.name == d.offered.name {
            return Err(TypeError::LinearityError {
                at: Loc {
                    def: d.name.clone(),
                    span: d.span,
                    head: d.name.to_string(),
                },
                msg: format!("channel `{}` declared twice", p.name),
            });
        }
    }
    Ok(Judgment {
        def: d.name.clone(),
        span: d.span,
        theory: theory.clone(),
        ctx,
        term: d.body.clone(),
        running: d.at.clone(),
        offered: d.offered.clone(),
    })
}

/// Σ₃ for one definition: the declaration premises, then the body.
pub fn check_definition(env: Env<'_>, d: &ProcDef, opts: CheckOptions) -> Result<(), TypeError> {
    let j = definition_judgment(env, d)?;
    let c = cx(env, &j.theory, &d.name, d.span, opts)?;
    let (psi, omega) = (&d.offered.sec.conf, &d.offered.sec.integ);
    let at = || Loc {
        def: d.name.clone(),
        span: d.span,
        head: format!("proc {}", d.name),
    };
    let sigma = |a: &SecTerm, b: &SecTerm, what: &str| -> Result<(), TypeError> {
        if c.entails(a, b)? {
            Ok(())
        } else {
            Err(TypeError::FlowViolation {
                at: at(),
                rule: "Σ₃",
                premise: format!("{}{what}", not_leq(a, b)),
            })
        }
    };
    for p in &d.params {
        for t in [&p.sec.conf, &p.sec.integ] {
            c.ent.well_scoped(t).map_err(|e| c.sec(e))?;
        }
        let what = format!(" for parameter `{}`", p.name);
        sigma(&p.sec.conf, psi, &what)?;
        sigma(&p.sec.integ, omega, &what)?;
        sigma(&p.sec.integ, &p.sec.conf, &what)?;
    }
    for t in [psi, omega, &d.at.conf, &d.at.integ] {
        c.ent.well_scoped(t).map_err(|e| c.sec(e))?;
    }
    sigma(&d.at.conf, psi, "")?;
    sigma(&d.at.integ, omega, "")?;
    sigma(&d.at.integ, &d.at.conf, "")?;
    sigma(omega, psi, "")?;
    check_process(env, &j, opts)
}

/// Σ₁–Σ₃ over the whole signature, generated forwarders included. Bodies are
/// checked against the complete signature, so mutual recursion is allowed.
pub fn check_signature(prog: &Program, opts: CheckOptions) -> Result<(), TypeError> {
    let sig = &prog.signature;
    contractive_check(sig.typedefs.iter().map(|(n, t)| (n, t)))?;
    for (n, t) in &sig.typedefs {
        well_formed(sig, n, t)?;
    }
    let env = Env::of(prog);
    for d in &sig.procdefs {
        check_definition(env, d, opts)?;
    }
    for d in sig.forwarders.values() {
        check_definition(env, d, opts)?;
    }
    Ok(())
}

/// Every branching point of every definition, with the environment and
/// secrets the synchronization check sees there. Definitions are walked with
/// the check itself disabled, so insecure programs yield their sites too.
pub fn sync_sites(prog: &Program) -> Result<Vec<SyncSite>, TypeError> {
    let env = Env::of(prog);
    let sites = RefCell::new(Vec::new());
    let opts = CheckOptions {
        skip_sync: true,
        ..Default::default()
    };
    for d in prog.signature.procdefs.iter().chain(prog.signature.forwarders.values()) {
        let j = definition_judgment(env, d)?;
        let mut c = cx(env, &j.theory, &j.def, j.span, opts)?;
        c.sites = Some(&sites);
        c.check(
            j.ctx.clone(),
            &j.term,
            &j.running,
            &j.offered.name,
            &j.offered.ty,
            &j.offered.sec,
        )?;
    }
    Ok(sites.into_inner())
}

/// The exec line: a concrete, order-preserving substitution for the main
/// process's theory.
pub fn check_main(prog: &Program) -> Result<(), TypeError> {
    let name = &prog.main.proc;
    let def = prog.signature.procdef(name).ok_or_else(|| TypeError::UnknownProcess {
        at: Loc {
            def: name.clone(),
            span: Span::default(),
            head: format!("exec {name}"),
        },
        name: name.clone(),
    })?;
    let th = lookup_theory(&prog.theories, def.theory.as_str()).ok_or_else(|| TypeError::UnknownTheory {
        def: def.name.clone(),
        name: def.theory.clone(),
    })?;
    let gamma = crate::security::Substitution::positional(th, &prog.main.subst).map_err(|e| TypeError::Sec {
        def: name.clone(),
        source: e,
    })?;
    if prog.main.subst.len() > th.vars.len() {
        return Err(TypeError::Sec {
            def: name.clone(),
            source: SecError::Arity {
                theory: th.name.clone(),
                expected: th.vars.len(),
                found: prog.main.subst.len(),
            },
        });
    }
    for (v, t) in &gamma.map {
        if !t.is_concrete() {
            return Err(TypeError::SubstitutionNotConcrete {
                var: v.clone(),
                term: t.source(),
            });
        }
    }
    let base = concrete_theory();
    let ent = Entailer::new(base, &prog.lattice).map_err(|e| TypeError::Sec {
        def: name.clone(),
        source: e,
    })?;
    for r in &th.relations {
        let (l, rr) = (gamma.apply(&r.lhs), gamma.apply(&r.rhs));
        let (l, rr) = match (l, rr) {
            (Ok(l), Ok(rr)) => (l, rr),
            (Err(e), _) | (_, Err(e)) => {
                return Err(TypeError::Sec {
                    def: name.clone(),
                    source: e,
                })
            }
        };
        let ok = ent.entails(&l, &rr).map_err(|e| TypeError::Sec {
            def: name.clone(),
            source: e,
        })?;
        if !ok {
            return Err(TypeError::SubstitutionNotOrderPreserving {
                proc: name.clone(),
                relation: format!("{} ⊑ {} (becomes {l} ⊑ {rr})", r.lhs, r.rhs),
            });
        }
    }
    Ok(())
}

/// The theory with no variables: entailment over the lattice alone.
pub fn concrete_theory() -> &'static SecurityTheory {
    static TH: std::sync::OnceLock<SecurityTheory> = std::sync::OnceLock::new();
    TH.get_or_init(|| SecurityTheory::empty("$concrete"))
}
