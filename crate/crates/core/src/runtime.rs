//! Runtime configurations and the asynchronous dynamics.
//!
//! A configuration is a set of process nodes and in-flight messages over
//! generation-indexed channels. Every send leaves a message on the current
//! generation and moves the sender to the next one; the receiver consumes
//! the message and follows. Forwards are not primitive: they expand into the
//! forwarder body for the channel's type.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ast::{ChanDecl, Proc, Program, Term};
use crate::desugar::expand_tail_call;
use crate::forwarders::fwder;
use crate::ident::Ident;
use crate::lattice::{ConcreteLattice, Level};
use crate::security::{SecPair, SecTerm, Substitution};
use crate::synccheck::{lookup_proc, lookup_theory, resolve_subst};
use crate::typecheck::{check_process, concrete_theory, CheckOptions, Ctx, Env, Judgment, TypeError};
use crate::types::{type_equal, unfold_head, SessionType};

/// Concrete ⟨confidentiality, integrity⟩.
pub type LPair = (Level, Level);

/// `y_α`: a channel base plus its generation.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct RtChan {
    pub base: u32,
    pub gen: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Msg {
    Label(Ident),
    Chan(RtChan),
    Close,
}

#[derive(Clone, Debug)]
pub struct ProcNode {
    /// Spawn order; the root is 0.
    pub ordinal: u64,
    pub def: Ident,
    pub term: Term,
    /// Source names in scope, including the offered channel.
    pub locals: BTreeMap<Ident, RtChan>,
    pub offered: Ident,
    pub pair: LPair,
    pub running: LPair,
    pub(crate) spawns: u32,
}

impl ProcNode {
    pub fn offered_chan(&self) -> RtChan {
        self.locals[&self.offered]
    }
}

#[derive(Clone, Debug)]
pub struct ChanInfo {
    pub ty: SessionType,
    pub pair: LPair,
}

#[derive(Clone, Debug)]
pub struct Config {
    pub procs: Vec<ProcNode>,
    pub msgs: BTreeMap<RtChan, Msg>,
    pub chans: HashMap<RtChan, ChanInfo>,
    bases: Vec<Ident>,
    base_index: HashMap<Ident, u32>,
    pub root: u32,
    next_ordinal: u64,
}

impl Config {
    pub fn base_name(&self, base: u32) -> &Ident {
        &self.bases[base as usize]
    }

    pub fn chan_name(&self, c: RtChan) -> String {
        format!("{}#{}", self.bases[c.base as usize], c.gen)
    }

    pub fn is_empty(&self) -> bool {
        self.procs.is_empty() && self.msgs.is_empty()
    }

    /// The channel the configuration offers to the outside.
    pub fn root_chan(&self) -> Option<RtChan> {
        self.procs
            .iter()
            .map(|p| p.offered_chan())
            .chain(self.msgs.keys().copied())
            .filter(|c| c.base == self.root)
            .max()
    }

    /// Hash of the configuration up to spawn order and base numbering.
    /// Channel names are interleaving-independent, so two states that differ
    /// only in the order their processes were spawned hash alike.
    pub fn canonical_hash<H: Hasher>(&self, h: &mut H) {
        let name = |c: &RtChan| (self.base_name(c.base), c.gen);
        let mut procs: Vec<&ProcNode> = self.procs.iter().collect();
        procs.sort_by_key(|p| name(&p.offered_chan()));
        for p in procs {
            p.def.hash(h);
            p.term.hash(h);
            for (x, c) in &p.locals {
                x.hash(h);
                name(c).hash(h);
            }
            p.offered.hash(h);
            p.pair.hash(h);
            p.running.hash(h);
            p.spawns.hash(h);
        }
        0xffu8.hash(h);
        let mut msgs: Vec<_> = self.msgs.iter().map(|(c, m)| (name(c), m)).collect();
        msgs.sort_by(|a, b| a.0.cmp(&b.0));
        for (c, m) in msgs {
            c.hash(h);
            match m {
                Msg::Label(l) => (0u8, l).hash(h),
                Msg::Chan(y) => (1u8, name(y)).hash(h),
                Msg::Close => 2u8.hash(h),
            }
        }
    }

    fn new_base(&mut self, name: Ident) -> u32 {
        let id = self.bases.len() as u32;
        self.base_index.insert(name.clone(), id);
        self.bases.push(name);
        id
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    Spawn,
    Fwd,
    DFwd,
    OneSnd,
    OneRcv,
    PlusSnd,
    PlusRcv,
    WithSnd,
    WithRcv,
    TensorSnd,
    TensorRcv,
    LolliSnd,
    LolliRcv,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::Spawn => "Spawn",
            Rule::Fwd => "Fwd",
            Rule::DFwd => "D-Fwd",
            Rule::OneSnd => "1snd",
            Rule::OneRcv => "1rcv",
            Rule::PlusSnd => "⊕snd",
            Rule::PlusRcv => "⊕rcv",
            Rule::WithSnd => "&snd",
            Rule::WithRcv => "&rcv",
            Rule::TensorSnd => "⊗snd",
            Rule::TensorRcv => "⊗rcv",
            Rule::LolliSnd => "⊸snd",
            Rule::LolliRcv => "⊸rcv",
        }
    }

    pub fn is_send(self) -> bool {
        matches!(
            self,
            Rule::OneSnd | Rule::PlusSnd | Rule::WithSnd | Rule::TensorSnd | Rule::LolliSnd
        )
    }
}

/// An enabled rule instance: the acting process and the channel involved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Redex {
    pub proc: usize,
    pub rule: Rule,
    pub chan: RtChan,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    Label,
    Chan,
    Close,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Label => "label",
            EventKind::Chan => "chan",
            EventKind::Close => "close",
        }
    }
}

/// One message creation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    pub step: usize,
    pub base: Ident,
    pub gen: u32,
    pub conf: Level,
    pub integ: Level,
    pub sec: (Ident, Ident),
    pub kind: EventKind,
    /// Label, payload channel base, or `-` for close.
    pub payload: String,
    /// Generation of a payload channel.
    pub payload_gen: Option<u32>,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let payload = match self.payload_gen {
            Some(g) => format!("{}#{g}", self.payload),
            None => self.payload.clone(),
        };
        write!(
            f,
            "step={} chan={}#{} sec={},{} kind={} payload={}",
            self.step,
            self.base,
            self.gen,
            self.sec.0,
            self.sec.1,
            self.kind.as_str(),
            payload
        )
    }
}

pub fn format_trace(trace: &[TraceEvent]) -> String {
    let mut s = String::new();
    for e in trace {
        s.push_str(&e.to_string());
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuntimeError {
    #[error("main process `{0}` is not defined")]
    UnknownMain(Ident),
    #[error("main process `{0}` uses channels; only closed programs can run")]
    OpenMain(Ident),
    #[error("no enabled redex {0:?}")]
    InvalidRedex(Redex),
    #[error("runtime fault in `{def}`: {msg}")]
    Fault { def: Ident, msg: String },
    #[error("configuration is not a forest: {0}")]
    NotAForest(String),
    #[error("node `{node}` is ill-typed: {source}")]
    NodeTypeError { node: String, source: Box<TypeError> },
    #[error("node `{node}` violates {premise}")]
    SecurityPremiseViolation { node: String, premise: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Poised,
    Budget,
    /// No redex, but some node is blocked on an internal channel.
    Stuck,
}

pub enum Scheduler {
    Seeded(Box<ChaCha8Rng>),
    First,
}

impl Scheduler {
    pub fn seeded(seed: u64) -> Self {
        Scheduler::Seeded(Box::new(ChaCha8Rng::seed_from_u64(seed)))
    }

    pub fn pick(&mut self, n: usize) -> usize {
        match self {
            Scheduler::Seeded(r) => r.gen_range(0..n),
            Scheduler::First => 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: Config,
    pub trace: Vec<TraceEvent>,
    pub status: Status,
    pub steps: usize,
    /// Index into the redex list chosen at each step.
    pub schedule: Vec<usize>,
}

pub const DEFAULT_MAX_STEPS: usize = 10_000;

/// FNV-1a; names of spawned channels must not depend on the interleaving,
/// so they are derived from the spawner's channel and spawn count.
fn fnv(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for p in parts {
        for b in *p {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn stem(x: &Ident) -> &str {
    x.as_str().split('$').next().unwrap_or("")
}

pub struct Machine<'p> {
    pub prog: &'p Program,
    lat: &'p ConcreteLattice,
    fuel: usize,
}

impl<'p> Machine<'p> {
    pub fn new(prog: &'p Program) -> Self {
        Machine {
            prog,
            lat: &prog.lattice,
            fuel: prog.signature.typedefs.len() + 1,
        }
    }

    fn fault(&self, def: &Ident, msg: impl Into<String>) -> RuntimeError {
        RuntimeError::Fault {
            def: def.clone(),
            msg: msg.into(),
        }
    }

    pub fn eval(&self, t: &SecTerm) -> Option<Level> {
        match t {
            SecTerm::Level(n) => self.lat.level(n.as_str()),
            SecTerm::Var(_) => None,
            SecTerm::Join(a, b) => Some(self.lat.join(self.eval(a)?, self.eval(b)?)),
        }
    }

    fn level(&self, t: &SecTerm, def: &Ident) -> Result<Level, RuntimeError> {
        self.eval(t)
            .ok_or_else(|| self.fault(def, format!("security term `{t}` is not concrete")))
    }

    fn lpair(&self, p: &SecPair, def: &Ident) -> Result<LPair, RuntimeError> {
        Ok((self.level(&p.conf, def)?, self.level(&p.integ, def)?))
    }

    pub fn sec_pair(&self, p: LPair) -> SecPair {
        SecPair::new(
            SecTerm::Level(self.lat.name(p.0).clone()),
            SecTerm::Level(self.lat.name(p.1).clone()),
        )
    }

    fn join(&self, a: LPair, b: LPair) -> LPair {
        (self.lat.join(a.0, b.0), self.lat.join(a.1, b.1))
    }

    fn structural(&self, t: &SessionType, def: &Ident) -> Result<SessionType, RuntimeError> {
        unfold_head(&self.prog.signature, t, self.fuel)
            .cloned()
            .map_err(|e| self.fault(def, e.to_string()))
    }

    /// γ̂ applied to a definition body, with every term evaluated to a level.
    fn instantiate_body(&self, body: &Term, gamma: &Substitution, def: &Ident) -> Result<Term, RuntimeError> {
        let mut eval = |s: &SecTerm| {
            let t = gamma.apply(s)?;
            Ok(match self.eval(&t) {
                Some(l) => SecTerm::Level(self.lat.name(l).clone()),
                None => t,
            })
        };
        crate::ast::map_sec_terms(body, &mut eval).map_err(|e| self.fault(def, e.to_string()))
    }

    /// The initial configuration: the exec'd process alone.
    pub fn initial(&self) -> Result<Config, RuntimeError> {
        let main = &self.prog.main;
        let def = self
            .prog
            .signature
            .procdef(&main.proc)
            .ok_or_else(|| RuntimeError::UnknownMain(main.proc.clone()))?;
        if !def.params.is_empty() {
            return Err(RuntimeError::OpenMain(def.name.clone()));
        }
        let th = lookup_theory(&self.prog.theories, def.theory.as_str())
            .ok_or_else(|| self.fault(&def.name, format!("unknown theory `{}`", def.theory)))?;
        let gamma = Substitution::positional(th, &main.subst).map_err(|e| self.fault(&def.name, e.to_string()))?;
        let mut cfg = Config {
            procs: Vec::new(),
            msgs: BTreeMap::new(),
            chans: HashMap::new(),
            bases: Vec::new(),
            base_index: HashMap::new(),
            root: 0,
            next_ordinal: 1,
        };
        let root = cfg.new_base(def.offered.name.clone());
        cfg.root = root;
        let chan = RtChan { base: root, gen: 0 };
        let pair = self.lpair(
            &gamma
                .apply_pair(&def.offered.sec)
                .map_err(|e| self.fault(&def.name, e.to_string()))?,
            &def.name,
        )?;
        let running = self.lpair(
            &gamma
                .apply_pair(&def.at)
                .map_err(|e| self.fault(&def.name, e.to_string()))?,
            &def.name,
        )?;
        cfg.chans.insert(
            chan,
            ChanInfo {
                ty: def.offered.ty.clone(),
                pair,
            },
        );
        let mut locals = BTreeMap::new();
        locals.insert(def.offered.name.clone(), chan);
        cfg.procs.push(ProcNode {
            ordinal: 0,
            def: def.name.clone(),
            term: self.instantiate_body(&def.body, &gamma, &def.name)?,
            locals,
            offered: def.offered.name.clone(),
            pair,
            running,
            spawns: 0,
        });
        Ok(cfg)
    }

    fn local(&self, p: &ProcNode, x: &Ident) -> Result<RtChan, RuntimeError> {
        p.locals
            .get(x)
            .copied()
            .ok_or_else(|| self.fault(&p.def, format!("channel `{x}` is not bound")))
    }

    pub fn redex_of(&self, cfg: &Config, i: usize) -> Option<Redex> {
        let p = &cfg.procs[i];
        let provider = |x: &Ident| *x == p.offered;
        let (rule, x) = match &*p.term {
            Proc::Spawn { binder, .. } => (Rule::Spawn, binder),
            Proc::TailCall { chan, .. } => (Rule::Spawn, chan),
            Proc::Forward { offered, .. } => (Rule::Fwd, offered),
            Proc::FwdCall { offered, .. } => (Rule::DFwd, offered),
            Proc::Close { chan } => (Rule::OneSnd, chan),
            Proc::Select { chan, .. } if provider(chan) => (Rule::PlusSnd, chan),
            Proc::Select { chan, .. } => (Rule::WithSnd, chan),
            Proc::Send { chan, .. } if provider(chan) => (Rule::TensorSnd, chan),
            Proc::Send { chan, .. } => (Rule::LolliSnd, chan),
            Proc::Case { chan, .. } => {
                let c = *p.locals.get(chan)?;
                let Some(Msg::Label(_)) = cfg.msgs.get(&c) else {
                    return None;
                };
                let rule = if provider(chan) { Rule::WithRcv } else { Rule::PlusRcv };
                return Some(Redex { proc: i, rule, chan: c });
            }
            Proc::Recv { chan, .. } => {
                let c = *p.locals.get(chan)?;
                let Some(Msg::Chan(_)) = cfg.msgs.get(&c) else {
                    return None;
                };
                let rule = if provider(chan) {
                    Rule::LolliRcv
                } else {
                    Rule::TensorRcv
                };
                return Some(Redex { proc: i, rule, chan: c });
            }
            Proc::Wait { chan, .. } => {
                let c = *p.locals.get(chan)?;
                let Some(Msg::Close) = cfg.msgs.get(&c) else {
                    return None;
                };
                return Some(Redex {
                    proc: i,
                    rule: Rule::OneRcv,
                    chan: c,
                });
            }
        };
        let chan = match rule {
            Rule::Spawn => p.offered_chan(),
            _ => *p.locals.get(x)?,
        };
        Some(Redex { proc: i, rule, chan })
    }

    /// Every enabled rule instance, ordered by the acting process's offered
    /// channel name, then rule.
    pub fn enumerate_redexes(&self, cfg: &Config) -> Vec<Redex> {
        let mut out: Vec<Redex> = (0..cfg.procs.len()).filter_map(|i| self.redex_of(cfg, i)).collect();
        out.sort_by(|a, b| {
            let ka = cfg.procs[a.proc].offered_chan();
            let kb = cfg.procs[b.proc].offered_chan();
            (cfg.base_name(ka.base), ka.gen, a.rule).cmp(&(cfg.base_name(kb.base), kb.gen, b.rule))
        });
        out
    }

    /// Whether no rule applies and everything left waits on the outside.
    pub fn is_poised(&self, cfg: &Config) -> bool {
        if !self.enumerate_redexes(cfg).is_empty() {
            return false;
        }
        let Some(root) = cfg.root_chan() else { return true };
        cfg.msgs.keys().all(|c| *c == root)
            && cfg.procs.iter().all(|p| match &*p.term {
                Proc::Case { chan, .. } | Proc::Recv { chan, .. } => p.locals.get(chan) == Some(&root),
                _ => false,
            })
    }

    fn next_type(&self, cfg: &Config, c: RtChan, def: &Ident) -> Result<SessionType, RuntimeError> {
        let info = cfg
            .chans
            .get(&c)
            .ok_or_else(|| self.fault(def, format!("no type for {}", cfg.chan_name(c))))?;
        self.structural(&info.ty, def)
    }

    fn advance(&self, cfg: &mut Config, c: RtChan, ty: SessionType) -> RtChan {
        let next = RtChan {
            base: c.base,
            gen: c.gen + 1,
        };
        let pair = cfg.chans[&c].pair;
        cfg.chans.insert(next, ChanInfo { ty, pair });
        next
    }

    fn event(
        &self,
        cfg: &Config,
        step: usize,
        c: RtChan,
        kind: EventKind,
        payload: String,
        payload_gen: Option<u32>,
    ) -> TraceEvent {
        let pair = cfg.chans[&c].pair;
        TraceEvent {
            step,
            base: cfg.base_name(c.base).clone(),
            gen: c.gen,
            conf: pair.0,
            integ: pair.1,
            sec: (self.lat.name(pair.0).clone(), self.lat.name(pair.1).clone()),
            kind,
            payload,
            payload_gen,
        }
    }

    /// Name for a channel spawned by `parent`.
    fn spawn_name(&self, cfg: &Config, parent: &ProcNode, binder: &Ident) -> Ident {
        let s = stem(binder);
        if parent.ordinal == 0 && !cfg.base_index.contains_key(s) {
            return Ident::new(s);
        }
        let pbase = cfg.base_name(parent.offered_chan().base);
        let k = parent.spawns.to_string();
        let mut name = format!("{s}${:08x}", fnv(&[pbase.as_str().as_bytes(), k.as_bytes()]) as u32);
        while cfg.base_index.contains_key(name.as_str()) {
            name.push('\'');
        }
        Ident::from(name)
    }

    /// Applies one redex. Returns the trace event when a message was created.
    pub fn step(&self, cfg: &mut Config, r: &Redex, step_no: usize) -> Result<Option<TraceEvent>, RuntimeError> {
        if self.redex_of(cfg, r.proc).as_ref() != Some(r) {
            return Err(RuntimeError::InvalidRedex(r.clone()));
        }
        let mut p = cfg.procs[r.proc].clone();
        let def = p.def.clone();
        let term = p.term.clone();
        let mut ev = None;
        match &*term {
            Proc::TailCall {
                chan,
                proc,
                subst,
                args,
            } => {
                let z = Ident::from(format!("{}$rt{}", stem(chan), p.spawns));
                p.term = Arc::new(expand_tail_call(chan, z, proc, subst, args));
                return self.step_spawn(cfg, r.proc, p);
            }
            Proc::Spawn { .. } => return self.step_spawn(cfg, r.proc, p),
            Proc::Forward { offered, used } => {
                let c = self.local(&p, offered)?;
                let ty = cfg.chans[&c].ty.clone();
                p.term = fwder(&ty, offered, used);
            }
            Proc::FwdCall { ty, offered, used } => {
                let fdef = self
                    .prog
                    .signature
                    .forwarder(ty)
                    .ok_or_else(|| self.fault(&def, format!("no forwarder for `{ty}`")))?;
                let (oc, uc) = (self.local(&p, offered)?, self.local(&p, used)?);
                let pair = cfg.chans[&oc].pair;
                let gamma = Substitution::from_pairs(&[
                    ("psi_c", SecTerm::Level(self.lat.name(pair.0).clone())),
                    ("psi_i", SecTerm::Level(self.lat.name(pair.1).clone())),
                ]);
                let mut locals = BTreeMap::new();
                locals.insert(fdef.offered.name.clone(), oc);
                locals.insert(fdef.params[0].name.clone(), uc);
                p.locals = locals;
                p.offered = fdef.offered.name.clone();
                p.term = self.instantiate_body(&fdef.body, &gamma, &fdef.name)?;
                p.def = fdef.name.clone();
            }
            Proc::Close { chan } => {
                let c = self.local(&p, chan)?;
                cfg.msgs.insert(c, Msg::Close);
                ev = Some(self.event(cfg, step_no, c, EventKind::Close, "-".into(), None));
                cfg.procs.remove(r.proc);
                return Ok(ev);
            }
            Proc::Select { chan, label, cont } => {
                let c = self.local(&p, chan)?;
                let ty = self.next_type(cfg, c, &def)?;
                let ak = ty
                    .branch(label)
                    .cloned()
                    .ok_or_else(|| self.fault(&def, format!("label `{label}` not in {ty}")))?;
                cfg.msgs.insert(c, Msg::Label(label.clone()));
                ev = Some(self.event(cfg, step_no, c, EventKind::Label, label.to_string(), None));
                let next = self.advance(cfg, c, ak);
                p.locals.insert(chan.clone(), next);
                p.term = cont.clone();
            }
            Proc::Send { payload, chan, cont } => {
                let c = self.local(&p, chan)?;
                let y = self.local(&p, payload)?;
                let ty = self.next_type(cfg, c, &def)?;
                let b = match ty {
                    SessionType::Tensor(_, b) | SessionType::Lolli(_, b) => *b,
                    other => return Err(self.fault(&def, format!("send on {other}"))),
                };
                cfg.msgs.insert(c, Msg::Chan(y));
                ev = Some(self.event(
                    cfg,
                    step_no,
                    c,
                    EventKind::Chan,
                    cfg.base_name(y.base).to_string(),
                    Some(y.gen),
                ));
                let next = self.advance(cfg, c, b);
                p.locals.remove(payload);
                p.locals.insert(chan.clone(), next);
                p.term = cont.clone();
            }
            Proc::Case { chan, branches } => {
                let c = self.local(&p, chan)?;
                let Some(Msg::Label(k)) = cfg.msgs.remove(&c) else {
                    return Err(RuntimeError::InvalidRedex(r.clone()));
                };
                let body = branches
                    .iter()
                    .find(|(l, _)| *l == k)
                    .map(|(_, b)| b.clone())
                    .ok_or_else(|| self.fault(&def, format!("no branch for `{k}`")))?;
                let cp = cfg.chans[&c].pair;
                p.running = self.join(p.running, cp);
                p.locals.insert(
                    chan.clone(),
                    RtChan {
                        base: c.base,
                        gen: c.gen + 1,
                    },
                );
                cfg.chans.remove(&c);
                p.term = body;
            }
            Proc::Recv { binder, chan, cont } => {
                let c = self.local(&p, chan)?;
                let Some(Msg::Chan(y)) = cfg.msgs.remove(&c) else {
                    return Err(RuntimeError::InvalidRedex(r.clone()));
                };
                let cp = cfg.chans[&c].pair;
                p.running = self.join(p.running, cp);
                p.locals.insert(
                    chan.clone(),
                    RtChan {
                        base: c.base,
                        gen: c.gen + 1,
                    },
                );
                p.locals.insert(binder.clone(), y);
                cfg.chans.remove(&c);
                p.term = cont.clone();
            }
            Proc::Wait { chan, cont } => {
                let c = self.local(&p, chan)?;
                let Some(Msg::Close) = cfg.msgs.remove(&c) else {
                    return Err(RuntimeError::InvalidRedex(r.clone()));
                };
                let cp = cfg.chans[&c].pair;
                p.running = self.join(p.running, cp);
                p.locals.remove(chan);
                cfg.chans.remove(&c);
                p.term = cont.clone();
            }
        }
        cfg.procs[r.proc] = p;
        Ok(ev)
    }

    fn step_spawn(&self, cfg: &mut Config, idx: usize, mut p: ProcNode) -> Result<Option<TraceEvent>, RuntimeError> {
        let Proc::Spawn {
            binder,
            proc,
            subst,
            args,
            cont,
        } = &*p.term.clone()
        else {
            unreachable!("spawn redex");
        };
        let def = lookup_proc(&self.prog.signature, proc)
            .ok_or_else(|| self.fault(&p.def, format!("unknown process `{proc}`")))?;
        let th = lookup_theory(&self.prog.theories, def.theory.as_str())
            .ok_or_else(|| self.fault(&def.name, format!("unknown theory `{}`", def.theory)))?;
        let gamma = resolve_subst(th, concrete_theory(), subst).map_err(|e| self.fault(&p.def, e.to_string()))?;
        let pair = self.lpair(
            &gamma
                .apply_pair(&def.offered.sec)
                .map_err(|e| self.fault(&def.name, e.to_string()))?,
            &def.name,
        )?;
        let running = self.lpair(
            &gamma
                .apply_pair(&def.at)
                .map_err(|e| self.fault(&def.name, e.to_string()))?,
            &def.name,
        )?;
        let name = self.spawn_name(cfg, &p, binder);
        let base = cfg.new_base(name);
        let chan = RtChan { base, gen: 0 };
        cfg.chans.insert(
            chan,
            ChanInfo {
                ty: def.offered.ty.clone(),
                pair,
            },
        );
        let mut locals = BTreeMap::new();
        locals.insert(def.offered.name.clone(), chan);
        for (a, prm) in args.iter().zip(&def.params) {
            let c = p
                .locals
                .remove(a)
                .ok_or_else(|| self.fault(&p.def, format!("channel `{a}` is not bound")))?;
            locals.insert(prm.name.clone(), c);
        }
        let child = ProcNode {
            ordinal: cfg.next_ordinal,
            def: def.name.clone(),
            term: self.instantiate_body(&def.body, &gamma, &def.name)?,
            locals,
            offered: def.offered.name.clone(),
            pair,
            running,
            spawns: 0,
        };
        cfg.next_ordinal += 1;
        p.spawns += 1;
        p.locals.insert(binder.clone(), chan);
        p.term = cont.clone();
        cfg.procs[idx] = p;
        cfg.procs.push(child);
        Ok(None)
    }

    /// Runs until poised, stuck, or out of budget.
    pub fn run(
        &self,
        mut cfg: Config,
        sched: &mut Scheduler,
        max_steps: usize,
        check_each_step: bool,
    ) -> Result<RunResult, RuntimeError> {
        let mut trace = Vec::new();
        let mut schedule = Vec::new();
        let mut steps = 0;
        if check_each_step {
            self.config_typecheck(&cfg)?;
        }
        loop {
            let rs = self.enumerate_redexes(&cfg);
            if rs.is_empty() {
                let status = if self.is_poised(&cfg) {
                    Status::Poised
                } else {
                    Status::Stuck
                };
                return Ok(RunResult {
                    config: cfg,
                    trace,
                    status,
                    steps,
                    schedule,
                });
            }
            if steps >= max_steps {
                return Ok(RunResult {
                    config: cfg,
                    trace,
                    status: Status::Budget,
                    steps,
                    schedule,
                });
            }
            let k = sched.pick(rs.len());
            schedule.push(k);
            if let Some(e) = self.step(&mut cfg, &rs[k], steps)? {
                trace.push(e);
            }
            steps += 1;
            if check_each_step {
                self.config_typecheck(&cfg)?;
            }
        }
    }

    /// Replays a schedule of redex indices.
    pub fn replay(&self, mut cfg: Config, schedule: &[usize]) -> Result<Vec<TraceEvent>, RuntimeError> {
        let mut trace = Vec::new();
        for (n, k) in schedule.iter().enumerate() {
            let rs = self.enumerate_redexes(&cfg);
            let r = rs.get(*k).cloned().ok_or(RuntimeError::InvalidRedex(Redex {
                proc: usize::MAX,
                rule: Rule::Spawn,
                chan: RtChan { base: 0, gen: 0 },
            }))?;
            if let Some(e) = self.step(&mut cfg, &r, n)? {
                trace.push(e);
            }
        }
        Ok(trace)
    }

    fn premise(&self, node: &str, a: Level, b: Level, what: &str) -> Result<(), RuntimeError> {
        if self.lat.leq(a, b) {
            Ok(())
        } else {
            Err(RuntimeError::SecurityPremiseViolation {
                node: node.to_string(),
                premise: format!("Ψ₀ ⊮ {} ⊑ {} ({what})", self.lat.name(a), self.lat.name(b)),
            })
        }
    }

    /// Configuration typing: a forest of well-typed nodes, each satisfying
    /// the security premises of its rule.
    pub fn config_typecheck(&self, cfg: &Config) -> Result<(), RuntimeError> {
        let mut provided: BTreeMap<RtChan, String> = BTreeMap::new();
        let mut used: BTreeMap<RtChan, String> = BTreeMap::new();
        let mut edges: Vec<(RtChan, Vec<RtChan>)> = Vec::new();
        let claim = |map: &mut BTreeMap<RtChan, String>, c: RtChan, who: &str, what: &str| {
            if let Some(prev) = map.insert(c, who.to_string()) {
                return Err(RuntimeError::NotAForest(format!(
                    "{} {what} by both `{prev}` and `{who}`",
                    cfg.chan_name(c)
                )));
            }
            Ok(())
        };
        let env = Env {
            sig: &self.prog.signature,
            theories: &self.prog.theories,
            lat: self.lat,
        };
        for p in &cfg.procs {
            let me = p.offered_chan();
            let node = format!("proc({})", cfg.chan_name(me));
            claim(&mut provided, me, &node, "provided")?;
            let mut ctx = Ctx::new();
            let mut uses = Vec::new();
            for (x, c) in &p.locals {
                if *x == p.offered {
                    continue;
                }
                claim(&mut used, *c, &node, "used")?;
                uses.push(*c);
                let info = cfg
                    .chans
                    .get(c)
                    .ok_or_else(|| RuntimeError::NotAForest(format!("{} has no type", cfg.chan_name(*c))))?;
                ctx.insert(x.clone(), (info.ty.clone(), self.sec_pair(info.pair)));
                self.premise(&node, info.pair.0, p.pair.0, "d′ ⊑ d")?;
                self.premise(&node, info.pair.1, p.pair.1, "e′ ⊑ e")?;
                self.premise(&node, info.pair.1, info.pair.0, "e′ ⊑ d′")?;
            }
            edges.push((me, uses));
            self.premise(&node, p.running.0, p.pair.0, "d₁ ⊑ d")?;
            self.premise(&node, p.running.1, p.pair.1, "e₁ ⊑ e")?;
            self.premise(&node, p.running.1, p.running.0, "e₁ ⊑ d₁")?;
            self.premise(&node, p.pair.1, p.pair.0, "e ⊑ d")?;
            let oty = cfg
                .chans
                .get(&me)
                .ok_or_else(|| RuntimeError::NotAForest(format!("{} has no type", cfg.chan_name(me))))?;
            let j = Judgment {
                def: p.def.clone(),
                span: Default::default(),
                theory: concrete_theory().clone(),
                ctx,
                term: p.term.clone(),
                running: self.sec_pair(p.running),
                offered: ChanDecl {
                    name: p.offered.clone(),
                    ty: oty.ty.clone(),
                    sec: self.sec_pair(p.pair),
                },
            };
            check_process(env, &j, CheckOptions::default()).map_err(|e| RuntimeError::NodeTypeError {
                node: node.clone(),
                source: Box::new(e),
            })?;
        }
        for (c, m) in &cfg.msgs {
            let node = format!("msg({})", cfg.chan_name(*c));
            let info = cfg
                .chans
                .get(c)
                .ok_or_else(|| RuntimeError::NotAForest(format!("{} has no type", cfg.chan_name(*c))))?;
            let next = RtChan {
                base: c.base,
                gen: c.gen + 1,
            };
            let ty = self.structural(&info.ty, &Ident::new(&node))?;
            let bad = |why: String| RuntimeError::NodeTypeError {
                node: node.clone(),
                source: Box::new(TypeError::TypeMismatch {
                    at: Default::default(),
                    msg: why,
                }),
            };
            let next_ty = |want: &SessionType| -> Result<(), RuntimeError> {
                let have = cfg
                    .chans
                    .get(&next)
                    .ok_or_else(|| bad(format!("{} has no type", cfg.chan_name(next))))?;
                if have.pair != info.pair || !type_equal(&self.prog.signature, &have.ty, want) {
                    return Err(bad(format!(
                        "{} has type {}, expected {want}",
                        cfg.chan_name(next),
                        have.ty
                    )));
                }
                Ok(())
            };
            // (provides, uses)
            let (prov, uses): (RtChan, Vec<RtChan>) = match (m, &ty) {
                (Msg::Label(k), SessionType::Plus(_)) => {
                    next_ty(ty.branch(k).ok_or_else(|| bad(format!("label `{k}` not in {ty}")))?)?;
                    (*c, vec![next])
                }
                (Msg::Label(k), SessionType::With(_)) => {
                    next_ty(ty.branch(k).ok_or_else(|| bad(format!("label `{k}` not in {ty}")))?)?;
                    (next, vec![*c])
                }
                (Msg::Chan(y), SessionType::Tensor(a, b)) | (Msg::Chan(y), SessionType::Lolli(a, b)) => {
                    next_ty(b)?;
                    let yi = cfg
                        .chans
                        .get(y)
                        .ok_or_else(|| bad(format!("{} has no type", cfg.chan_name(*y))))?;
                    if yi.pair != info.pair || !type_equal(&self.prog.signature, &yi.ty, a) {
                        return Err(bad(format!("payload {} does not match {a}", cfg.chan_name(*y))));
                    }
                    if matches!(ty, SessionType::Tensor(..)) {
                        (*c, vec![*y, next])
                    } else {
                        (next, vec![*y, *c])
                    }
                }
                (Msg::Close, SessionType::One) => (*c, vec![]),
                _ => return Err(bad(format!("message {m:?} on a channel of type {ty}"))),
            };
            claim(&mut provided, prov, &node, "provided")?;
            self.premise(&node, info.pair.1, info.pair.0, "e ⊑ d")?;
            for u in &uses {
                claim(&mut used, *u, &node, "used")?;
                let ui = cfg
                    .chans
                    .get(u)
                    .ok_or_else(|| bad(format!("{} has no type", cfg.chan_name(*u))))?;
                self.premise(&node, ui.pair.0, info.pair.0, "d′ ⊑ d")?;
                self.premise(&node, ui.pair.1, ui.pair.0, "e′ ⊑ d′")?;
            }
            edges.push((prov, uses));
        }
        // Closed configurations: every used channel has a provider, and
        // exactly the root is left unused.
        for c in used.keys() {
            if !provided.contains_key(c) {
                return Err(RuntimeError::NotAForest(format!(
                    "{} is used but not provided",
                    cfg.chan_name(*c)
                )));
            }
        }
        let roots: Vec<RtChan> = provided.keys().filter(|c| !used.contains_key(c)).copied().collect();
        if roots.len() > 1 {
            return Err(RuntimeError::NotAForest(format!(
                "several unused channels: {}",
                roots.iter().map(|c| cfg.chan_name(*c)).collect::<Vec<_>>().join(", ")
            )));
        }
        // Reachability from the root rules out cycles.
        let children: HashMap<RtChan, &Vec<RtChan>> = edges.iter().map(|(p, u)| (*p, u)).collect();
        let mut seen = BTreeSet::new();
        let mut stack: Vec<RtChan> = roots;
        while let Some(c) = stack.pop() {
            if !seen.insert(c) {
                return Err(RuntimeError::NotAForest(format!("{} reached twice", cfg.chan_name(c))));
            }
            if let Some(us) = children.get(&c) {
                stack.extend(us.iter().copied());
            }
        }
        if seen.len() != provided.len() {
            return Err(RuntimeError::NotAForest("cycle among nodes".into()));
        }
        Ok(())
    }
}

/// Loads, runs and returns the trace of a checked program.
pub fn run_program(prog: &Program, seed: Option<u64>, max_steps: usize) -> Result<RunResult, RuntimeError> {
    let m = Machine::new(prog);
    let cfg = m.initial()?;
    let mut sched = match seed {
        Some(s) => Scheduler::seeded(s),
        None => Scheduler::First,
    };
    m.run(cfg, &mut sched, max_steps, false)
}
