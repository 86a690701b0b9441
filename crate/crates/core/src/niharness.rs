//! Empirical noninterference: compare what an observer at level ξ can see
//! of two closed programs across all schedules.
//!
//! The observer sees the messages on channels whose confidentiality is at
//! most ξ, in the order they are sent. Exploration is bounded by a number of
//! observable events. Between two events only the processes that have to
//! move for some process to send next are stepped, so invisible
//! interleavings that cannot change what is observed are not enumerated.
//! A state from which no further event can be produced within the step
//! budget counts as quiet; divergence and termination look the same.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::hash::{Hash, Hasher};

use thiserror::Error;

use crate::ast::{Proc, Program, Term};
use crate::ident::Ident;
use crate::lattice::{ConcreteLattice, Level};
use crate::runtime::{format_trace, Config, Machine, Msg, Redex, RtChan, Rule, RuntimeError, Scheduler, TraceEvent};
use crate::security::SecTerm;
use crate::synccheck::{lookup_proc, lookup_theory, resolve_subst};
use crate::typecheck::concrete_theory;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NiError {
    #[error("observer level `{0}` is not declared in the lattice")]
    UnknownObserver(String),
    #[error("the two programs declare different lattices")]
    LatticeMismatch,
    #[error("exploration exceeded the budget of {0} states")]
    StateBudgetExceeded(usize),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

/// One observed message with the generation counters dropped.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObsEvent {
    pub chan: Ident,
    pub sec: (Ident, Ident),
    pub kind: &'static str,
    pub payload: String,
}

impl ObsEvent {
    pub fn of(e: &TraceEvent) -> Self {
        ObsEvent {
            chan: e.base.clone(),
            sec: e.sec.clone(),
            kind: e.kind.as_str(),
            payload: e.payload.clone(),
        }
    }
}

impl fmt::Display for ObsEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.chan, self.payload)
    }
}

pub type ObsTrace = Vec<ObsEvent>;

/// Keeps the events whose carrier confidentiality is at most `xi`.
pub fn project_trace(trace: &[TraceEvent], xi: Level, lat: &ConcreteLattice) -> Vec<TraceEvent> {
    trace.iter().filter(|e| lat.leq(e.conf, xi)).cloned().collect()
}

pub fn normalize(trace: &[TraceEvent]) -> ObsTrace {
    trace.iter().map(ObsEvent::of).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Exhaustive,
    Sampled { seeds: u64 },
}

#[derive(Clone, Copy, Debug)]
pub struct ExploreOptions {
    /// Steps allowed to reach the next observable event (exhaustive mode),
    /// or per run (sampled mode).
    pub max_steps: usize,
    /// Bound on observable events along any single run.
    pub max_events: usize,
    pub max_states: usize,
    pub mode: Mode,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions {
            max_steps: 2_000,
            max_events: 12,
            max_states: 1_000_000,
            mode: Mode::Exhaustive,
        }
    }
}

/// Observable behaviour of one program: every observable prefix reached, and
/// the traces after which no further observable event is possible.
#[derive(Clone, Debug, Default)]
pub struct TraceSet {
    pub prefixes: BTreeSet<ObsTrace>,
    pub quiescent: BTreeSet<ObsTrace>,
    pub states: usize,
    /// Drives abandoned at the step budget; nonzero means the sets may be
    /// incomplete.
    pub truncated: usize,
    /// A schedule reaching each prefix, for witnesses.
    schedules: BTreeMap<ObsTrace, Vec<usize>>,
}

impl TraceSet {
    pub fn schedule(&self, t: &ObsTrace) -> Option<&[usize]> {
        self.schedules.get(t).map(|s| s.as_slice())
    }

    /// Traces of runs that hit the event bound.
    pub fn maximal(&self, bound: usize) -> impl Iterator<Item = &ObsTrace> {
        self.prefixes.iter().filter(move |t| t.len() == bound)
    }

    fn record(&mut self, t: &ObsTrace, sched: impl FnOnce() -> Vec<usize>) {
        if !self.prefixes.contains(t) {
            self.prefixes.insert(t.clone());
            self.schedules.insert(t.clone(), sched());
        }
    }
}

fn key(cfg: &Config, trace: &ObsTrace) -> u128 {
    let mut h1 = DefaultHasher::new();
    cfg.canonical_hash(&mut h1);
    trace.hash(&mut h1);
    let mut h2 = DefaultHasher::new();
    0x5eedu16.hash(&mut h2);
    h1.finish().hash(&mut h2);
    trace.len().hash(&mut h2);
    cfg.canonical_hash(&mut h2);
    ((h1.finish() as u128) << 64) | h2.finish() as u128
}

/// Collects the observable traces of `cfg` at observer level `xi`.
pub fn explore_traces(m: &Machine<'_>, cfg: Config, xi: Level, opts: &ExploreOptions) -> Result<TraceSet, NiError> {
    match opts.mode {
        Mode::Exhaustive => Explorer::new(m, xi, opts.max_steps).explore(cfg, opts),
        Mode::Sampled { seeds } => explore_sampled(m, cfg, xi, opts, seeds),
    }
}

/// Outcome of pushing one process forward.
enum Advance {
    Stepped,
    /// The next step needed is an observable send.
    NeedsVisible,
    Blocked,
}

/// Exhaustive exploration driven by observable events.
///
/// Processes are deterministic and every enabled step stays enabled until
/// taken, so the order of invisible steps only matters through what they
/// enable. From each state the explorer picks a process, runs exactly the
/// invisible steps that process causally needs (its own, and those of the
/// senders it is blocked on) and then its next observable send. Spawns by the
/// driven process branch, since the child may be the one to send first.
/// Every run's first observable event is reached this way, and no invisible
/// producer is ever run ahead of need.
struct Explorer<'m, 'p> {
    m: &'m Machine<'p>,
    xi: Level,
    budget: usize,
    reach: HashMap<(Ident, Vec<SecTerm>), bool>,
    truncated: usize,
}

impl<'m, 'p> Explorer<'m, 'p> {
    fn new(m: &'m Machine<'p>, xi: Level, budget: usize) -> Self {
        Explorer {
            m,
            xi,
            budget,
            reach: HashMap::new(),
            truncated: 0,
        }
    }

    fn observable(&self, cfg: &Config, c: RtChan) -> bool {
        cfg.chans
            .get(&c)
            .is_some_and(|i| self.m.prog.lattice.leq(i.pair.0, self.xi))
    }

    fn visible(&self, cfg: &Config, r: &Redex) -> bool {
        r.rule.is_send() && self.observable(cfg, r.chan)
    }

    /// Whether a spawn of `proc[subst]` can ever lead to an observable
    /// channel. Every channel a process holds is one it was given, spawned,
    /// or received at the carrier's own level, so only spawns introduce new
    /// observable channels.
    fn spawn_reaches(&mut self, proc: &Ident, subst: &[SecTerm]) -> bool {
        let k = (proc.clone(), subst.to_vec());
        if let Some(r) = self.reach.get(&k) {
            return *r;
        }
        // Least fixed point: a cycle alone never observes.
        self.reach.insert(k.clone(), false);
        let r = self.spawn_reaches_uncached(proc, subst);
        self.reach.insert(k, r);
        r
    }

    fn spawn_reaches_uncached(&mut self, proc: &Ident, subst: &[SecTerm]) -> bool {
        let prog = self.m.prog;
        let Some(def) = lookup_proc(&prog.signature, proc) else {
            return false;
        };
        let Some(th) = lookup_theory(&prog.theories, def.theory.as_str()) else {
            return false;
        };
        let Ok(gamma) = resolve_subst(th, concrete_theory(), subst) else {
            return false;
        };
        let offered = gamma.apply(&def.offered.sec.conf).ok().and_then(|t| self.m.eval(&t));
        if offered.is_some_and(|l| prog.lattice.leq(l, self.xi)) {
            return true;
        }
        let mut inner = Vec::new();
        spawns_in(&def.body, &mut inner);
        inner.into_iter().any(|(q, sub)| {
            let sub: Option<Vec<SecTerm>> = sub.iter().map(|t| gamma.apply(t).ok()).collect();
            sub.is_some_and(|sub| self.spawn_reaches(&q, &sub))
        })
    }

    fn may_observe(&mut self, cfg: &Config, i: usize) -> bool {
        let p = &cfg.procs[i];
        if p.locals.values().any(|c| self.observable(cfg, *c)) {
            return true;
        }
        let mut sp = Vec::new();
        spawns_in(&p.term, &mut sp);
        sp.into_iter().any(|(q, sub)| self.spawn_reaches(&q, &sub))
    }

    fn fire(&self, cfg: &mut Config, r: &Redex, sched: &mut Vec<usize>) -> Result<Option<TraceEvent>, NiError> {
        let k = self
            .m
            .enumerate_redexes(cfg)
            .iter()
            .position(|x| x == r)
            .expect("redex of a live process is enabled");
        sched.push(k);
        Ok(self.m.step(cfg, r, 0)?)
    }

    /// The process that has to act before a message can appear on `c`.
    /// Endpoints are matched by base name: the two sides of a channel are
    /// at different generations while a message is in flight.
    fn sender(&self, cfg: &Config, c: RtChan, waiter: usize) -> Option<usize> {
        let holds = |p: &crate::runtime::ProcNode, b: u32| p.locals.values().any(|x| x.base == b);
        if let Some(i) = cfg
            .procs
            .iter()
            .enumerate()
            .position(|(i, p)| i != waiter && holds(p, c.base))
        {
            return Some(i);
        }
        // In flight as a payload: the receiver of that message, who holds
        // the carrier at the message's own generation, holds it next.
        let (d, _) = cfg
            .msgs
            .iter()
            .find(|(_, m)| matches!(m, Msg::Chan(x) if x.base == c.base))?;
        cfg.procs.iter().position(|p| p.locals.values().any(|x| x == d))
    }

    fn blocked_on(cfg: &Config, i: usize) -> Option<RtChan> {
        let p = &cfg.procs[i];
        match &*p.term {
            Proc::Case { chan, .. } | Proc::Recv { chan, .. } | Proc::Wait { chan, .. } => p.locals.get(chan).copied(),
            _ => None,
        }
    }

    /// One invisible step toward unblocking process `i`.
    fn advance(
        &self,
        cfg: &mut Config,
        i: usize,
        sched: &mut Vec<usize>,
        chain: &mut Vec<usize>,
    ) -> Result<Advance, NiError> {
        if let Some(r) = self.m.redex_of(cfg, i) {
            if self.visible(cfg, &r) {
                return Ok(Advance::NeedsVisible);
            }
            self.fire(cfg, &r, sched)?;
            return Ok(Advance::Stepped);
        }
        let Some(c) = Self::blocked_on(cfg, i) else {
            return Ok(Advance::Blocked);
        };
        let Some(q) = self.sender(cfg, c, i) else {
            return Ok(Advance::Blocked);
        };
        if chain.contains(&q) {
            return Ok(Advance::Blocked);
        }
        chain.push(i);
        self.advance(cfg, q, sched, chain)
    }

    /// All ways for the process with ordinal `target`, or a child it spawns
    /// on the way, to perform its next observable send.
    fn drive(&mut self, cfg: &Config, target: u64) -> Result<Vec<(Config, TraceEvent, Vec<usize>)>, NiError> {
        let mut out = Vec::new();
        let mut work = vec![(cfg.clone(), target, Vec::new())];
        // Shared by all alternatives: a process that spawns forever without
        // communicating would otherwise multiply them without bound.
        let mut fuel = self.budget;
        while let Some((mut cfg, t, mut sched)) = work.pop() {
            while let Some(i) = cfg.procs.iter().position(|p| p.ordinal == t) {
                if fuel == 0 {
                    self.truncated += 1;
                    break;
                }
                fuel -= 1;
                if !self.may_observe(&cfg, i) {
                    break;
                }
                if let Some(r) = self.m.redex_of(&cfg, i) {
                    let visible = self.visible(&cfg, &r);
                    let ev = self.fire(&mut cfg, &r, &mut sched)?;
                    if visible {
                        out.push((cfg, ev.expect("observable send"), sched));
                        break;
                    }
                    if r.rule == Rule::Spawn {
                        let child = cfg.procs.last().expect("spawned").ordinal;
                        work.push((cfg.clone(), child, sched.clone()));
                    }
                    continue;
                }
                match self.advance(&mut cfg, i, &mut sched, &mut Vec::new())? {
                    Advance::Stepped => {}
                    Advance::NeedsVisible | Advance::Blocked => break,
                }
            }
        }
        Ok(out)
    }

    fn explore(&mut self, cfg: Config, opts: &ExploreOptions) -> Result<TraceSet, NiError> {
        let mut out = TraceSet::default();
        let mut nodes: Vec<(u32, Vec<usize>)> = vec![(u32::MAX, Vec::new())];
        let mut seen: HashSet<u128> = HashSet::new();
        let mut queue: VecDeque<(u32, Config, ObsTrace)> = VecDeque::new();
        seen.insert(key(&cfg, &Vec::new()));
        out.record(&Vec::new(), Vec::new);
        queue.push_back((0, cfg, Vec::new()));
        while let Some((id, cfg, trace)) = queue.pop_front() {
            if trace.len() >= opts.max_events {
                continue;
            }
            let mut any = false;
            let candidates: Vec<u64> = cfg.procs.iter().map(|p| p.ordinal).collect();
            for t in candidates {
                for (next, e, seg) in self.drive(&cfg, t)? {
                    any = true;
                    let mut tr = trace.clone();
                    tr.push(ObsEvent::of(&e));
                    if !seen.insert(key(&next, &tr)) {
                        continue;
                    }
                    if seen.len() > opts.max_states {
                        return Err(NiError::StateBudgetExceeded(opts.max_states));
                    }
                    nodes.push((id, seg));
                    let nid = (nodes.len() - 1) as u32;
                    out.record(&tr, || schedule_of(&nodes, nid));
                    queue.push_back((nid, next, tr));
                }
            }
            if !any {
                out.quiescent.insert(trace);
            }
        }
        out.states = seen.len();
        out.truncated = self.truncated;
        Ok(out)
    }
}

fn spawns_in(t: &Term, out: &mut Vec<(Ident, Vec<SecTerm>)>) {
    match &**t {
        Proc::Select { cont, .. } | Proc::Send { cont, .. } | Proc::Recv { cont, .. } | Proc::Wait { cont, .. } => {
            spawns_in(cont, out)
        }
        Proc::Case { branches, .. } => branches.iter().for_each(|(_, b)| spawns_in(b, out)),
        Proc::Spawn { proc, subst, cont, .. } => {
            out.push((proc.clone(), subst.clone()));
            spawns_in(cont, out);
        }
        Proc::TailCall { proc, subst, .. } => out.push((proc.clone(), subst.clone())),
        Proc::Close { .. } | Proc::Forward { .. } | Proc::FwdCall { .. } => {}
    }
}

fn schedule_of(nodes: &[(u32, Vec<usize>)], mut i: u32) -> Vec<usize> {
    let mut segs = Vec::new();
    while i != u32::MAX {
        let (parent, seg) = &nodes[i as usize];
        segs.push(seg.as_slice());
        i = *parent;
    }
    segs.into_iter().rev().flatten().copied().collect()
}

fn explore_sampled(
    m: &Machine<'_>,
    cfg: Config,
    xi: Level,
    opts: &ExploreOptions,
    seeds: u64,
) -> Result<TraceSet, NiError> {
    let lat = &m.prog.lattice;
    let mut out = TraceSet::default();
    for seed in 0..seeds {
        let mut sched = Scheduler::seeded(seed);
        let mut cfg = cfg.clone();
        let mut trace = Vec::new();
        let mut schedule = Vec::new();
        out.record(&trace, Vec::new);
        for step in 0..opts.max_steps {
            let rs = m.enumerate_redexes(&cfg);
            if rs.is_empty() {
                out.quiescent.insert(trace.clone());
                break;
            }
            if trace.len() >= opts.max_events {
                break;
            }
            let k = sched.pick(rs.len());
            schedule.push(k);
            if let Some(e) = m.step(&mut cfg, &rs[k], step)?.filter(|e| lat.leq(e.conf, xi)) {
                trace.push(ObsEvent::of(&e));
                out.record(&trace, || schedule.clone());
            }
            out.states += 1;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

/// A trace one program can produce and the other cannot, with the schedule
/// that produces it.
#[derive(Clone, Debug)]
pub struct Witness {
    pub side: Side,
    /// The run cut at the point the observations diverge; the last observed
    /// event is the one the other program cannot match.
    pub trace: Vec<TraceEvent>,
    pub observed: ObsTrace,
    pub schedule: Vec<usize>,
    /// The difference is that one side goes quiet here and the other does not.
    pub quiescent: bool,
}

#[derive(Clone, Debug)]
pub enum Verdict {
    Equivalent { depth: usize, states: usize },
    Distinguished(Witness),
}

impl Verdict {
    pub fn is_equivalent(&self) -> bool {
        matches!(self, Verdict::Equivalent { .. })
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Equivalent { depth, states } => write!(f, "EQUIVALENT depth={depth} states={states}"),
            Verdict::Distinguished(w) => {
                let side = match w.side {
                    Side::A => "first",
                    Side::B => "second",
                };
                writeln!(f, "DISTINGUISHED")?;
                writeln!(
                    f,
                    "witness: only the {side} program {} {}",
                    if w.quiescent { "goes quiet after" } else { "can produce" },
                    w.observed.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(" ")
                )?;
                write!(f, "{}", format_trace(&w.trace))?;
                write!(
                    f,
                    "schedule: {}",
                    w.schedule.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(",")
                )
            }
        }
    }
}

/// The shortest trace in exactly one of the two sets; ties break on order.
fn first_difference(a: &BTreeSet<ObsTrace>, b: &BTreeSet<ObsTrace>) -> Option<(Side, ObsTrace)> {
    let only_a = a.difference(b).map(|t| (Side::A, t));
    let only_b = b.difference(a).map(|t| (Side::B, t));
    only_a
        .chain(only_b)
        .min_by(|x, y| (x.1.len(), x.1).cmp(&(y.1.len(), y.1)))
        .map(|(s, t)| (s, t.clone()))
}

/// Replays a schedule and returns the full trace up to its last event.
fn replay_witness(m: &Machine<'_>, schedule: &[usize], xi: Level) -> Result<Vec<TraceEvent>, NiError> {
    let full = m.replay(m.initial()?, schedule)?;
    Ok(project_trace(&full, xi, &m.prog.lattice))
}

/// Explores both programs and compares what an observer at `xi` sees.
pub fn ni_check(a: &Program, b: &Program, xi: &str, opts: &ExploreOptions) -> Result<Verdict, NiError> {
    if a.lattice != b.lattice {
        return Err(NiError::LatticeMismatch);
    }
    let level = a
        .lattice
        .level(xi)
        .ok_or_else(|| NiError::UnknownObserver(xi.to_string()))?;
    let (ma, mb) = (Machine::new(a), Machine::new(b));
    let ta = explore_traces(&ma, ma.initial()?, level, opts)?;
    let tb = explore_traces(&mb, mb.initial()?, level, opts)?;
    let diff = first_difference(&ta.prefixes, &tb.prefixes)
        .map(|d| (d, false))
        .or_else(|| first_difference(&ta.quiescent, &tb.quiescent).map(|d| (d, true)));
    let Some(((side, observed), quiescent)) = diff else {
        return Ok(Verdict::Equivalent {
            depth: opts.max_events,
            states: ta.states + tb.states,
        });
    };
    let (m, set) = match side {
        Side::A => (&ma, &ta),
        Side::B => (&mb, &tb),
    };
    let schedule = set.schedule(&observed).map(|s| s.to_vec()).unwrap_or_default();
    let trace = replay_witness(m, &schedule, level)?;
    debug_assert_eq!(normalize(&trace), observed);
    Ok(Verdict::Distinguished(Witness {
        side,
        trace,
        observed,
        schedule,
        quiescent,
    }))
}
