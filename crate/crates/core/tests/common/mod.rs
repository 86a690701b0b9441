//! Generators and brute-force oracles shared by the integration tests.
//! The oracles deliberately avoid the library's own order tables.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeSet, HashSet};
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use sintegrity::ast::{Proc, Term};
use sintegrity::lattice::{ConcreteLattice, LevelDecl};
use sintegrity::niharness::{normalize, project_trace, ObsTrace};
use sintegrity::runtime::{Config, Machine};
use sintegrity::security::{Relation, SecTerm, SecurityTheory};
use sintegrity::Ident;

pub fn level_name(i: usize) -> String {
    format!("l{i}")
}

/// A random declaration list of `n` levels. Level 0 is the top; every later
/// level names ancestors among the earlier ones. With `tree` each level has
/// exactly one ancestor, which always yields a lattice.
pub fn random_decls<R: Rng>(rng: &mut R, n: usize, tree: bool) -> Vec<LevelDecl> {
    let mut out = vec![LevelDecl::new(&level_name(0), &[])];
    for k in 1..n {
        let names: Vec<String> = if tree {
            vec![level_name(rng.gen_range(0..k))]
        } else {
            let m = rng.gen_range(1..=k.min(3));
            let mut all: Vec<usize> = (0..k).collect();
            all.shuffle(rng);
            all[..m].iter().map(|&i| level_name(i)).collect()
        };
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        out.push(LevelDecl::new(&level_name(k), &refs));
    }
    out
}

/// `leq[a][b]` iff `a ⊑ b`, by graph search over the ancestor lists.
pub fn naive_order(decls: &[LevelDecl]) -> Vec<Vec<bool>> {
    let n = decls.len();
    let pos = |name: &Ident| decls.iter().position(|d| &d.name == name).unwrap();
    let mut leq = vec![vec![false; n]; n];
    for a in 0..n {
        let mut stack = vec![a];
        while let Some(x) = stack.pop() {
            if leq[a][x] {
                continue;
            }
            leq[a][x] = true;
            for anc in &decls[x].ancestors {
                stack.push(pos(anc));
            }
        }
    }
    leq
}

/// The unique least upper bound of `a` and `b`, by enumeration.
pub fn naive_join(leq: &[Vec<bool>], a: usize, b: usize) -> Option<usize> {
    let ubs: Vec<usize> = (0..leq.len()).filter(|&u| leq[a][u] && leq[b][u]).collect();
    let least: Vec<usize> = ubs
        .iter()
        .copied()
        .filter(|&u| ubs.iter().all(|&v| leq[u][v]))
        .collect();
    match least.as_slice() {
        [j] => Some(*j),
        _ => None,
    }
}

pub fn naive_is_lattice(decls: &[LevelDecl]) -> bool {
    let leq = naive_order(decls);
    let n = decls.len();
    (0..n).all(|a| (0..n).all(|b| naive_join(&leq, a, b).is_some()))
}

pub const VARS: [&str; 3] = ["v0", "v1", "v2"];

pub fn random_term<R: Rng>(rng: &mut R, lat: &ConcreteLattice, vars: usize, depth: u32) -> SecTerm {
    let leaf = |rng: &mut R| {
        if vars > 0 && rng.gen_bool(0.5) {
            SecTerm::var(VARS[rng.gen_range(0..vars)])
        } else {
            let l = rng.gen_range(0..lat.len());
            SecTerm::Level(lat.decls()[l].name.clone())
        }
    };
    if depth == 0 || rng.gen_bool(0.6) {
        leaf(rng)
    } else {
        SecTerm::Join(
            Box::new(random_term(rng, lat, vars, depth - 1)),
            Box::new(random_term(rng, lat, vars, depth - 1)),
        )
    }
}

pub fn random_theory<R: Rng>(rng: &mut R, lat: &ConcreteLattice, vars: usize) -> SecurityTheory {
    let mut th = SecurityTheory::empty("R");
    th.vars = VARS[..vars].iter().map(|v| Ident::new(v)).collect();
    for _ in 0..rng.gen_range(0..=3) {
        th.relations.push(Relation {
            lhs: random_term(rng, lat, vars, 1),
            rhs: random_term(rng, lat, vars, 1),
        });
    }
    th
}

/// Value of a term under an assignment, computed with `naive_join`.
pub fn naive_eval(t: &SecTerm, decls: &[LevelDecl], leq: &[Vec<bool>], asg: &[usize]) -> usize {
    match t {
        SecTerm::Level(n) => decls.iter().position(|d| &d.name == n).unwrap(),
        SecTerm::Var(v) => asg[VARS.iter().position(|x| *x == v.as_str()).unwrap()],
        SecTerm::Join(a, b) => naive_join(leq, naive_eval(a, decls, leq, asg), naive_eval(b, decls, leq, asg)).unwrap(),
    }
}

/// Every assignment of the theory's variables that satisfies its relations.
pub fn models(th: &SecurityTheory, decls: &[LevelDecl], leq: &[Vec<bool>]) -> Vec<Vec<usize>> {
    let k = th.vars.len();
    let n = decls.len();
    let mut out = Vec::new();
    let mut asg = vec![0; k];
    loop {
        if th
            .relations
            .iter()
            .all(|r| leq[naive_eval(&r.lhs, decls, leq, &asg)][naive_eval(&r.rhs, decls, leq, &asg)])
        {
            out.push(asg.clone());
        }
        let mut i = 0;
        while i < k {
            asg[i] += 1;
            if asg[i] < n {
                break;
            }
            asg[i] = 0;
            i += 1;
        }
        if i == k {
            return out;
        }
    }
}

/// Small process terms over channels `x`, `y`, `z`, for the sync relation.
pub fn random_proc<R: Rng>(rng: &mut R, depth: u32) -> Term {
    const CH: [&str; 3] = ["x", "y", "z"];
    const LB: [&str; 2] = ["a", "b"];
    let ch = |rng: &mut R| Ident::new(CH[rng.gen_range(0..3)]);
    if depth == 0 {
        return Arc::new(Proc::Close { chan: ch(rng) });
    }
    let p = match rng.gen_range(0..5) {
        0 => Proc::Close { chan: ch(rng) },
        1 => Proc::Select {
            chan: ch(rng),
            label: Ident::new(LB[rng.gen_range(0..2)]),
            cont: random_proc(rng, depth - 1),
        },
        2 => Proc::Wait {
            chan: ch(rng),
            cont: random_proc(rng, depth - 1),
        },
        3 => {
            let chan = ch(rng);
            let a = random_proc(rng, depth - 1);
            let b = random_proc(rng, depth - 1);
            Proc::Case {
                chan,
                branches: vec![(Ident::new("a"), a), (Ident::new("b"), b)],
            }
        }
        _ => Proc::Send {
            payload: ch(rng),
            chan: ch(rng),
            cont: random_proc(rng, depth - 1),
        },
    };
    Arc::new(p)
}

/// Plain breadth-first enumeration of every redex choice up to `max_steps`,
/// collecting observable prefixes. Memoizes on the configuration hash and
/// the observed trace, like the harness, but without any reduction of the
/// choices.
pub fn naive_prefixes(m: &Machine<'_>, xi: &str, max_steps: usize, max_events: usize) -> BTreeSet<ObsTrace> {
    let xi = m.prog.lattice.level(xi).unwrap();
    let mut out = BTreeSet::new();
    let mut seen: HashSet<u64> = HashSet::new();
    let mut frontier: Vec<(Config, Vec<sintegrity::runtime::TraceEvent>)> = vec![(m.initial().unwrap(), Vec::new())];
    out.insert(ObsTrace::new());
    for step in 0..max_steps {
        let mut next = Vec::new();
        for (cfg, tr) in frontier {
            for r in m.enumerate_redexes(&cfg) {
                let mut c = cfg.clone();
                let mut t = tr.clone();
                if let Some(e) = m.step(&mut c, &r, step).unwrap() {
                    t.push(e);
                }
                let obs = normalize(&project_trace(&t, xi, &m.prog.lattice));
                if obs.len() > max_events {
                    continue;
                }
                let mut h = DefaultHasher::new();
                c.canonical_hash(&mut h);
                obs.hash(&mut h);
                if seen.insert(h.finish()) {
                    out.insert(obs);
                    next.push((c, t));
                }
            }
        }
        frontier = next;
    }
    out
}

/// Observable prefixes, up to `max_events`, of `seeds` random complete runs.
pub fn sampled_prefixes(
    m: &Machine<'_>,
    xi: &str,
    seeds: u64,
    max_steps: usize,
    max_events: usize,
) -> BTreeSet<ObsTrace> {
    let xi = m.prog.lattice.level(xi).unwrap();
    let mut out = BTreeSet::new();
    for s in 0..seeds {
        let mut sched = sintegrity::runtime::Scheduler::seeded(s);
        let r = m.run(m.initial().unwrap(), &mut sched, max_steps, false).unwrap();
        let obs = normalize(&project_trace(&r.trace, xi, &m.prog.lattice));
        for k in 0..=obs.len().min(max_events) {
            out.insert(obs[..k].to_vec());
        }
    }
    out
}
