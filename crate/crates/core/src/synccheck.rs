//! Synchronization patterns `Ψ ⊢ P ∼⟨d,f⟩ Q`.
//!
//! Unsynchronized rules are invertible, so they are tried first and committed
//! to; only when none applies do the two heads have to match. Channels are
//! compared by identity: both sides start from one shared environment, and
//! binders introduced in lockstep receive a shared fresh id.

use std::collections::BTreeMap;
use std::fmt;

use crate::ast::{Proc, ProcDef, Signature, Term};
use crate::desugar::{expand_tail_call, Fresh};
use crate::ident::Ident;
use crate::security::{Entailer, SecError, SecPair, SecTerm, SecurityTheory, Substitution};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyncError {
    pub rule: String,
    pub detail: String,
    pub left: String,
    pub right: String,
}

impl fmt::Display for SyncError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} (left `{}`, right `{}`)",
            self.rule, self.detail, self.left, self.right
        )
    }
}

impl std::error::Error for SyncError {}

/// Channel name to (identity, security pair).
#[derive(Clone, Debug, Default)]
pub struct SyncEnv {
    chans: BTreeMap<Ident, (u32, SecPair)>,
}

impl SyncEnv {
    pub fn new() -> Self {
        SyncEnv::default()
    }

    pub fn insert(&mut self, name: Ident, id: u32, pair: SecPair) {
        self.chans.insert(name, (id, pair));
    }

    pub fn get(&self, name: &Ident) -> Option<&(u32, SecPair)> {
        self.chans.get(name)
    }

    pub fn max_id(&self) -> u32 {
        self.chans.values().map(|(i, _)| *i).max().unwrap_or(0)
    }
}

/// Looks a process up among user definitions, then generated forwarders.
pub fn lookup_proc<'a>(sig: &'a Signature, name: &Ident) -> Option<&'a ProcDef> {
    sig.procdef(name)
        .or_else(|| sig.forwarders.values().find(|d| &d.name == name))
}

/// Finds a theory by name; the forwarder theory is always available.
pub fn lookup_theory<'a>(theories: &'a [SecurityTheory], name: &str) -> Option<&'a SecurityTheory> {
    theories
        .iter()
        .find(|t| t.name.as_str() == name)
        .or_else(|| (name == crate::forwarders::FWD_THEORY).then(crate::forwarders::forwarder_theory))
}

/// The substitution a spawn denotes. `X[]` over the spawner's own theory is
/// shorthand for the identity.
pub fn resolve_subst(
    spawnee: &SecurityTheory,
    spawner: &SecurityTheory,
    terms: &[SecTerm],
) -> Result<Substitution, SecError> {
    if terms.is_empty() && !spawnee.vars.is_empty() && spawnee.name == spawner.name {
        return Ok(Substitution::identity(spawnee));
    }
    if terms.len() > spawnee.vars.len() {
        return Err(SecError::Arity {
            theory: spawnee.name.clone(),
            expected: spawnee.vars.len(),
            found: terms.len(),
        });
    }
    Substitution::positional(spawnee, terms)
}

/// Spawn data the sync rules need: `⟨γ̂ψ, γ̂ω⟩`, `γ̂ω₀` and γ itself.
pub struct SpawnInfo {
    pub offered: SecPair,
    pub running: SecPair,
    pub gamma: Substitution,
}

pub fn spawn_info(
    sig: &Signature,
    theories: &[SecurityTheory],
    spawner: &SecurityTheory,
    proc: &Ident,
    subst: &[SecTerm],
) -> Result<(SpawnInfo, ProcDef), String> {
    let def = lookup_proc(sig, proc).ok_or_else(|| format!("unknown process `{proc}`"))?;
    let th = lookup_theory(theories, def.theory.as_str()).ok_or_else(|| format!("unknown theory `{}`", def.theory))?;
    let gamma = resolve_subst(th, spawner, subst).map_err(|e| e.to_string())?;
    let offered = gamma.apply_pair(&def.offered.sec).map_err(|e| e.to_string())?;
    let running = gamma.apply_pair(&def.at).map_err(|e| e.to_string())?;
    Ok((
        SpawnInfo {
            offered,
            running,
            gamma,
        },
        def.clone(),
    ))
}

/// A message node as seen by the runtime variants of the rules.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MsgView {
    Label { carrier: u32, pair: SecPair, label: Ident },
    Chan { carrier: u32, pair: SecPair, payload: u32 },
    Close { carrier: u32, pair: SecPair },
}

impl MsgView {
    fn pair(&self) -> &SecPair {
        match self {
            MsgView::Label { pair, .. } | MsgView::Chan { pair, .. } | MsgView::Close { pair, .. } => pair,
        }
    }

    fn is_send(&self) -> bool {
        !matches!(self, MsgView::Close { .. })
    }
}

pub struct SyncCx<'a> {
    pub ent: &'a Entailer<'a>,
    pub sig: &'a Signature,
    pub theories: &'a [SecurityTheory],
    pub exhaustive: bool,
    next_id: u32,
    fresh: Fresh,
}

fn err(rule: &str, detail: impl Into<String>, p: &Proc, q: &Proc) -> SyncError {
    SyncError {
        rule: rule.to_string(),
        detail: detail.into(),
        left: p.head(),
        right: q.head(),
    }
}

fn sec(e: SecError) -> SyncError {
    SyncError {
        rule: "entailment".into(),
        detail: e.to_string(),
        left: String::new(),
        right: String::new(),
    }
}

impl<'a> SyncCx<'a> {
    pub fn new(ent: &'a Entailer<'a>, sig: &'a Signature, theories: &'a [SecurityTheory], exhaustive: bool) -> Self {
        SyncCx {
            ent,
            sig,
            theories,
            exhaustive,
            next_id: 1 << 20,
            fresh: Fresh::new(),
        }
    }

    fn leq(&self, a: &SecTerm, b: &SecTerm) -> Result<bool, SyncError> {
        self.ent.entails(a, b).map_err(sec)
    }

    fn fresh_id(&mut self) -> u32 {
        self.next_id += 1;
        self.next_id
    }

    fn chan<'e>(&self, env: &'e SyncEnv, x: &Ident, p: &Proc, q: &Proc) -> Result<&'e (u32, SecPair), SyncError> {
        env.get(x)
            .ok_or_else(|| err("scope", format!("channel `{x}` is not in scope"), p, q))
    }

    /// Carrier of an output prefix, if `p` is one.
    fn send_carrier(p: &Proc) -> Option<(&Ident, &Term)> {
        match p {
            Proc::Select { chan, cont, .. } | Proc::Send { chan, cont, .. } => Some((chan, cont)),
            _ => None,
        }
    }

    fn expand(&mut self, t: &Term) -> Term {
        match &**t {
            Proc::TailCall {
                chan,
                proc,
                subst,
                args,
            } => {
                let z = self.fresh.name(chan);
                std::sync::Arc::new(expand_tail_call(chan, z, proc, subst, args))
            }
            _ => t.clone(),
        }
    }

    /// `Brb-Unsync-Spawn` side conditions: `d ⊑ γ̂ω₀` and `d ⊑ e′` for every argument.
    fn spawn_unsync(&self, env: &SyncEnv, d: &SecTerm, p: &Proc, q: &Proc) -> Result<Option<SpawnInfo>, SyncError> {
        let Proc::Spawn { proc, subst, args, .. } = p else {
            return Ok(None);
        };
        let (info, _) =
            spawn_info(self.sig, self.theories, self.ent.theory(), proc, subst).map_err(|m| err("Spawn", m, p, q))?;
        if !self.leq(d, &info.running.integ)? {
            return Ok(None);
        }
        for a in args {
            let (_, pair) = self.chan(env, a, p, q)?;
            if !self.leq(d, &pair.integ)? {
                return Ok(None);
            }
        }
        Ok(Some(info))
    }

    pub fn sync(
        &mut self,
        el: &SyncEnv,
        er: &SyncEnv,
        p: &Term,
        q: &Term,
        d: &SecTerm,
        f: &SecTerm,
    ) -> Result<(), SyncError> {
        if self.leq(d, f)? {
            return Ok(());
        }
        let (p, q) = (self.expand(p), self.expand(q));

        if let Some((x, cont)) = Self::send_carrier(&p) {
            let (_, pair) = self.chan(el, x, &p, &q)?;
            if self.leq(d, &pair.integ)? {
                return self.sync(el, er, cont, &q, d, f);
            }
        }
        if let Some((x, cont)) = Self::send_carrier(&q) {
            let (_, pair) = self.chan(er, x, &p, &q)?;
            if self.leq(d, &pair.integ)? {
                return self.sync(el, er, &p, cont, d, f);
            }
        }
        if let Some(info) = self.spawn_unsync(el, d, &p, &q)? {
            let Proc::Spawn { binder, cont, .. } = &*p else {
                unreachable!()
            };
            let mut el2 = el.clone();
            let id = self.fresh_id();
            el2.insert(binder.clone(), id, info.offered);
            return self.sync(&el2, er, cont, &q, d, f);
        }
        if let Some(info) = self.spawn_unsync(er, d, &q, &p)? {
            let Proc::Spawn { binder, cont, .. } = &*q else {
                unreachable!()
            };
            let mut er2 = er.clone();
            let id = self.fresh_id();
            er2.insert(binder.clone(), id, info.offered);
            return self.sync(el, &er2, &p, cont, d, f);
        }

        match (&*p, &*q) {
            (Proc::Select { chan: x, cont: p1, .. }, Proc::Select { chan: y, cont: q1, .. }) => {
                self.same_chan("SndLab", el, er, x, y, &p, &q)?;
                self.sync(el, er, p1, q1, d, f)
            }
            (
                Proc::Send {
                    payload: a,
                    chan: x,
                    cont: p1,
                },
                Proc::Send {
                    payload: b,
                    chan: y,
                    cont: q1,
                },
            ) => {
                self.same_chan("SndChn", el, er, x, y, &p, &q)?;
                self.same_chan("SndChn", el, er, a, b, &p, &q)?;
                self.sync(el, er, p1, q1, d, f)
            }
            (Proc::Case { chan: x, branches: bp }, Proc::Case { chan: y, branches: bq }) => {
                let pair = self.same_chan("RcvLab", el, er, x, y, &p, &q)?;
                let f1 = SecTerm::join(f.clone(), pair.integ);
                let pairs: Vec<(usize, usize)> = if self.exhaustive {
                    (0..bp.len()).flat_map(|j| (0..bq.len()).map(move |k| (j, k))).collect()
                } else {
                    (0..bq.len())
                        .map(|k| (0, k))
                        .chain((1..bp.len()).map(|j| (j, 0)))
                        .collect()
                };
                for (j, k) in pairs {
                    self.sync(el, er, &bp[j].1, &bq[k].1, d, &f1).map_err(|mut e| {
                        e.detail = format!("branches `{}`/`{}` of `{}`: {}", bp[j].0, bq[k].0, p.head(), e.detail);
                        e
                    })?;
                }
                Ok(())
            }
            (
                Proc::Recv {
                    binder: b1,
                    chan: x,
                    cont: p1,
                },
                Proc::Recv {
                    binder: b2,
                    chan: y,
                    cont: q1,
                },
            ) => {
                let pair = self.same_chan("RcvChn", el, er, x, y, &p, &q)?;
                let id = self.fresh_id();
                let (mut el2, mut er2) = (el.clone(), er.clone());
                el2.insert(b1.clone(), id, pair.clone());
                er2.insert(b2.clone(), id, pair.clone());
                let f1 = SecTerm::join(f.clone(), pair.integ);
                self.sync(&el2, &er2, p1, q1, d, &f1)
            }
            (
                Proc::Spawn {
                    binder: b1,
                    proc: x1,
                    subst: s1,
                    args: a1,
                    cont: p1,
                },
                Proc::Spawn {
                    binder: b2,
                    proc: x2,
                    subst: s2,
                    args: a2,
                    cont: q1,
                },
            ) => {
                if x1 != x2 {
                    return Err(err("Sync-Spawn", format!("spawns `{x1}` and `{x2}` differ"), &p, &q));
                }
                let (i1, _) = spawn_info(self.sig, self.theories, self.ent.theory(), x1, s1)
                    .map_err(|m| err("Sync-Spawn", m, &p, &q))?;
                let (i2, _) = spawn_info(self.sig, self.theories, self.ent.theory(), x2, s2)
                    .map_err(|m| err("Sync-Spawn", m, &p, &q))?;
                for (v, t1) in &i1.gamma.map {
                    let t2 = &i2.gamma.map[v];
                    if !self.ent.entails_eq(t1, t2).map_err(sec)? {
                        return Err(err(
                            "Sync-Spawn",
                            format!("substitutions differ at `{v}`: {t1} vs {t2}"),
                            &p,
                            &q,
                        ));
                    }
                }
                if a1.len() != a2.len() {
                    return Err(err("Sync-Spawn", "argument lists differ", &p, &q));
                }
                for (a, b) in a1.iter().zip(a2) {
                    self.same_chan("Sync-Spawn", el, er, a, b, &p, &q)?;
                }
                let id = self.fresh_id();
                let (mut el2, mut er2) = (el.clone(), er.clone());
                el2.insert(b1.clone(), id, i1.offered.clone());
                er2.insert(b2.clone(), id, i1.offered);
                self.sync(&el2, &er2, p1, q1, d, f)
            }
            (Proc::Forward { offered: x1, used: y1 }, Proc::Forward { offered: x2, used: y2 }) => {
                self.same_chan("Fwd", el, er, x1, x2, &p, &q)?;
                self.same_chan("Fwd", el, er, y1, y2, &p, &q)?;
                Ok(())
            }
            (
                Proc::FwdCall {
                    ty: t1,
                    offered: x1,
                    used: y1,
                },
                Proc::FwdCall {
                    ty: t2,
                    offered: x2,
                    used: y2,
                },
            ) => {
                if t1 != t2 {
                    return Err(err("D-Fwd", "forwarders of different types", &p, &q));
                }
                self.same_chan("D-Fwd", el, er, x1, x2, &p, &q)?;
                self.same_chan("D-Fwd", el, er, y1, y2, &p, &q)?;
                Ok(())
            }
            (Proc::Close { chan: x }, Proc::Close { chan: y }) => {
                self.same_chan("Close", el, er, x, y, &p, &q)?;
                Ok(())
            }
            (Proc::Wait { chan: x, cont: p1 }, Proc::Wait { chan: y, cont: q1 }) => {
                let pair = self.same_chan("Wait", el, er, x, y, &p, &q)?;
                let f1 = SecTerm::join(f.clone(), pair.integ);
                self.sync(el, er, p1, q1, d, &f1)
            }
            _ => Err(err(
                "sync",
                format!("no rule relates these actions at secret {d} and integrity {f}"),
                &p,
                &q,
            )),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn same_chan(
        &self,
        rule: &str,
        el: &SyncEnv,
        er: &SyncEnv,
        x: &Ident,
        y: &Ident,
        p: &Proc,
        q: &Proc,
    ) -> Result<SecPair, SyncError> {
        let (i, pair) = self.chan(el, x, p, q)?;
        let (j, _) = self.chan(er, y, p, q)?;
        if i != j {
            return Err(err(rule, format!("`{x}` and `{y}` are different channels"), p, q));
        }
        Ok(pair.clone())
    }

    /// Branch bodies of one `case`, pairwise. By default one branch is checked
    /// against all others, which suffices by symmetry and transitivity.
    pub fn sync_branches(
        &mut self,
        env: &SyncEnv,
        branches: &[(Ident, Term)],
        d: &SecTerm,
        f: &SecTerm,
    ) -> Result<(), (Ident, Ident, SyncError)> {
        let pairs: Vec<(usize, usize)> = if self.exhaustive {
            (0..branches.len())
                .flat_map(|i| (i + 1..branches.len()).map(move |j| (i, j)))
                .collect()
        } else {
            (1..branches.len()).map(|j| (0, j)).collect()
        };
        for (i, j) in pairs {
            self.sync(env, env, &branches[i].1, &branches[j].1, d, f)
                .map_err(|e| (branches[i].0.clone(), branches[j].0.clone(), e))?;
        }
        Ok(())
    }

    /// Runtime variant over in-flight messages; `None` is an exhausted side.
    pub fn sync_messages(
        &self,
        l: Option<&MsgView>,
        r: Option<&MsgView>,
        d: &SecTerm,
        f: &SecTerm,
    ) -> Result<(), SyncError> {
        let head = |m: Option<&MsgView>| m.map(|m| format!("{m:?}")).unwrap_or_else(|| "_".into());
        let fail = |rule: &str, detail: &str| SyncError {
            rule: rule.into(),
            detail: detail.into(),
            left: head(l),
            right: head(r),
        };
        if self.leq(d, f)? {
            return Ok(());
        }
        if let Some(m) = l {
            if m.is_send() && self.leq(d, &m.pair().integ)? {
                return self.sync_messages(None, r, d, f);
            }
        }
        if let Some(m) = r {
            if m.is_send() && self.leq(d, &m.pair().integ)? {
                return self.sync_messages(l, None, d, f);
            }
        }
        match (l, r) {
            (None, None) => Ok(()),
            (Some(MsgView::Label { carrier: a, .. }), Some(MsgView::Label { carrier: b, .. })) if a == b => Ok(()),
            (
                Some(MsgView::Chan {
                    carrier: a, payload: x, ..
                }),
                Some(MsgView::Chan {
                    carrier: b, payload: y, ..
                }),
            ) if a == b && x == y => Ok(()),
            (Some(MsgView::Close { carrier: a, .. }), Some(MsgView::Close { carrier: b, .. })) if a == b => Ok(()),
            _ => Err(fail("M-sync", "messages are not synchronized")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{validate_lattice, ConcreteLattice, LevelDecl};
    use std::sync::Arc;

    fn lat() -> ConcreteLattice {
        validate_lattice(&[
            LevelDecl::new("bank", &[]),
            LevelDecl::new("alice", &["bank"]),
            LevelDecl::new("bob", &["bank"]),
            LevelDecl::new("guest", &["alice", "bob"]),
        ])
        .unwrap()
    }

    fn lv(n: &str) -> SecTerm {
        SecTerm::level(n)
    }

    fn env(chans: &[(&str, &str, &str)]) -> SyncEnv {
        let mut e = SyncEnv::new();
        for (i, (n, c, i2)) in chans.iter().enumerate() {
            e.insert(Ident::new(n), i as u32, SecPair::new(lv(c), lv(i2)));
        }
        e
    }

    fn close(x: &str) -> Term {
        Arc::new(Proc::Close { chan: x.into() })
    }

    fn select(x: &str, l: &str, k: Term) -> Term {
        Arc::new(Proc::Select {
            chan: x.into(),
            label: l.into(),
            cont: k,
        })
    }

    #[test]
    fn unsync3_when_secret_below_integrity() {
        let lat = lat();
        let th = SecurityTheory::empty("E");
        let ent = Entailer::new(&th, &lat).unwrap();
        let sig = Signature::default();
        let mut cx = SyncCx::new(&ent, &sig, &[], false);
        let e = env(&[("x", "guest", "guest")]);
        let p = select("x", "a", close("x"));
        assert!(cx.sync(&e, &e, &p, &close("x"), &lv("guest"), &lv("bank")).is_ok());
    }

    #[test]
    fn mismatched_heads_rejected() {
        let lat = lat();
        let th = SecurityTheory::empty("E");
        let ent = Entailer::new(&th, &lat).unwrap();
        let sig = Signature::default();
        let mut cx = SyncCx::new(&ent, &sig, &[], false);
        let e = env(&[("x", "guest", "guest")]);
        let p = select("x", "a", close("x"));
        assert!(cx.sync(&e, &e, &p, &close("x"), &lv("bank"), &lv("guest")).is_err());
    }

    #[test]
    fn different_labels_on_same_channel_match() {
        let lat = lat();
        let th = SecurityTheory::empty("E");
        let ent = Entailer::new(&th, &lat).unwrap();
        let sig = Signature::default();
        let mut cx = SyncCx::new(&ent, &sig, &[], false);
        let e = env(&[("x", "bank", "guest"), ("y", "bank", "guest")]);
        let p = select("x", "a", close("y"));
        let q = select("x", "b", close("y"));
        assert!(cx.sync(&e, &e, &p, &q, &lv("bank"), &lv("guest")).is_ok());
        let r = select("y", "b", close("y"));
        assert!(cx.sync(&e, &e, &p, &r, &lv("bank"), &lv("guest")).is_err());
    }

    #[test]
    fn high_integrity_sends_are_skipped() {
        let lat = lat();
        let th = SecurityTheory::empty("E");
        let ent = Entailer::new(&th, &lat).unwrap();
        let sig = Signature::default();
        let mut cx = SyncCx::new(&ent, &sig, &[], false);
        // Carrier integrity bank is above the secret alice.
        let e = env(&[("x", "bank", "bank"), ("z", "bank", "guest")]);
        let p = select("x", "a", close("z"));
        assert!(cx.sync(&e, &e, &p, &close("z"), &lv("alice"), &lv("guest")).is_ok());
        assert!(cx.sync(&e, &e, &close("z"), &p, &lv("alice"), &lv("guest")).is_ok());
    }

    #[test]
    fn message_variants() {
        let lat = lat();
        let th = SecurityTheory::empty("E");
        let ent = Entailer::new(&th, &lat).unwrap();
        let sig = Signature::default();
        let cx = SyncCx::new(&ent, &sig, &[], false);
        let low = SecPair::new(lv("bank"), lv("guest"));
        let lab = |c, l: &str| MsgView::Label {
            carrier: c,
            pair: low.clone(),
            label: l.into(),
        };
        let (d, f) = (lv("bank"), lv("guest"));
        assert!(cx.sync_messages(Some(&lab(1, "a")), Some(&lab(1, "b")), &d, &f).is_ok());
        assert!(cx
            .sync_messages(Some(&lab(1, "a")), Some(&lab(2, "a")), &d, &f)
            .is_err());
        assert!(cx.sync_messages(None, None, &d, &f).is_ok());
        assert!(cx.sync_messages(Some(&lab(1, "a")), None, &d, &f).is_err());
        let high = MsgView::Label {
            carrier: 3,
            pair: SecPair::same(lv("bank")),
            label: "a".into(),
        };
        assert!(cx.sync_messages(Some(&high), None, &d, &f).is_ok());
        let c = MsgView::Close {
            carrier: 4,
            pair: low.clone(),
        };
        assert!(cx.sync_messages(Some(&c), Some(&c), &d, &f).is_ok());
        assert!(cx
            .sync_messages(Some(&c), Some(&lab(1, "a")), &lv("guest"), &lv("bank"))
            .is_ok());
    }
}
