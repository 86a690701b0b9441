//! Acceptance criteria, one PASS/FAIL line each. Run with
//! `cargo test -p sintegrity --test acceptance`.

// The tolerance is a pinned constant that happens to be zero.
#![allow(clippy::absurd_extreme_comparisons)]

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sintegrity::ast::Signature;
use sintegrity::corpus::{self, load_corpus, Expect};
use sintegrity::lattice::validate_lattice;
use sintegrity::niharness::{explore_traces, ni_check, ExploreOptions, Verdict};
use sintegrity::runtime::{format_trace, run_program, Machine, Scheduler, Status};
use sintegrity::security::{Entailer, SecPair, SecTerm, SecurityTheory};
use sintegrity::synccheck::{SyncCx, SyncEnv};
use sintegrity::typecheck::{check_definition, sync_sites, CheckOptions, Env};
use sintegrity::{parser, Ident, Program};

// Pinned budgets and tolerances.
const CORPUS_TIME: Duration = Duration::from_secs(1);
const LATTICES: usize = 1_000;
const MAX_LEVELS: usize = 10;
const TERM_TRIPLES: usize = 10_000;
const SYNC_PAIRS: usize = 5_000;
const SEEDS: u64 = 20;
const STEPS: usize = 500;
const NI_EVENTS: usize = 12;
const NI_TIME: Duration = Duration::from_secs(60);
const NI_STATES: usize = 1_000_000;
const REPEATS: usize = 5;
const VIOLATIONS: usize = 0;

const UNSAFE: CheckOptions = CheckOptions {
    skip_sync: true,
    exhaustive_pairs: false,
};

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn accepted() -> Vec<(&'static str, Program)> {
    load_corpus()
        .into_iter()
        .filter(|c| c.expected == Expect::Accept)
        .map(|c| (c.name, sintegrity::load(c.source, CheckOptions::default()).unwrap()))
        .collect()
}

fn unsafe_prog(name: &str) -> Program {
    sintegrity::load(corpus::case(name).unwrap().source, UNSAFE).unwrap()
}

fn corpus_verdicts() -> Outcome {
    let t = Instant::now();
    let cases = load_corpus();
    let fails: Vec<String> = cases.iter().filter_map(|c| corpus::verdict(c).err()).collect();
    let el = t.elapsed();
    outcome(
        fails.is_empty() && el < CORPUS_TIME,
        format!(
            "{}/{} as expected in {el:?} (limit {CORPUS_TIME:?}) {}",
            cases.len() - fails.len(),
            cases.len(),
            fails.join("; ")
        ),
    )
}

fn lattice_laws() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut valid, mut tried, mut bad) = (0, 0, 0usize);
    while valid < LATTICES {
        tried += 1;
        let n = rng.gen_range(1..=MAX_LEVELS);
        let tree = rng.gen_bool(0.3);
        let decls = random_decls(&mut rng, n, tree);
        let naive = naive_is_lattice(&decls);
        let Ok(lat) = validate_lattice(&decls) else {
            bad += naive as usize;
            continue;
        };
        valid += 1;
        if !naive {
            bad += 1;
            continue;
        }
        let leq = naive_order(&decls);
        for a in lat.levels() {
            for b in lat.levels() {
                if Some(lat.join(a, b).index()) != naive_join(&leq, a.index(), b.index())
                    || lat.leq(a, b) != leq[a.index()][b.index()]
                {
                    bad += 1;
                }
            }
        }
    }

    let mut ent_bad = 0;
    for k in 0..TERM_TRIPLES {
        let n = rng.gen_range(1..=6);
        let decls = random_decls(&mut rng, n, k % 2 == 0);
        let Ok(lat) = validate_lattice(&decls) else { continue };
        let vars = rng.gen_range(0..=3);
        let th = random_theory(&mut rng, &lat, vars);
        let ent = Entailer::new(&th, &lat).unwrap();
        let t: Vec<SecTerm> = (0..3).map(|_| random_term(&mut rng, &lat, vars, 2)).collect();
        let e = |a: &SecTerm, b: &SecTerm| ent.entails(a, b).unwrap();
        let j = SecTerm::Join(Box::new(t[0].clone()), Box::new(t[1].clone()));
        let ok = e(&t[0], &t[0])
            && (!(e(&t[0], &t[1]) && e(&t[1], &t[2])) || e(&t[0], &t[2]))
            && e(&t[0], &j)
            && e(&t[1], &j);
        ent_bad += !ok as usize;
    }
    outcome(
        bad + ent_bad <= VIOLATIONS,
        format!(
            "{valid} lattices ({tried} generated), {bad} join violations; {TERM_TRIPLES} term triples, {ent_bad} entailment violations"
        ),
    )
}

fn sync_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut asym = 0;
    let th = SecurityTheory::empty("E");
    let sig = Signature::default();
    for _ in 0..SYNC_PAIRS {
        let decls = random_decls(&mut rng, 4, true);
        let lat = validate_lattice(&decls).unwrap();
        let ent = Entailer::new(&th, &lat).unwrap();
        let mut env = SyncEnv::new();
        for (i, x) in ["x", "y", "z"].iter().enumerate() {
            let c = random_term(&mut rng, &lat, 0, 0);
            let e = random_term(&mut rng, &lat, 0, 0);
            env.insert(Ident::new(x), i as u32, SecPair::new(c, e));
        }
        let d = random_term(&mut rng, &lat, 0, 0);
        let f = random_term(&mut rng, &lat, 0, 0);
        let p = random_proc(&mut rng, 3);
        let q = random_proc(&mut rng, 3);
        let pq = SyncCx::new(&ent, &sig, &[], false)
            .sync(&env, &env, &p, &q, &d, &f)
            .is_ok();
        let qp = SyncCx::new(&ent, &sig, &[], false)
            .sync(&env, &env, &q, &p, &d, &f)
            .is_ok();
        asym += (pq != qp) as usize;
    }

    // Reflexivity and transitivity at every branching point of the typed corpus.
    let (mut sites, mut irreflexive, mut intransitive) = (0, 0, 0);
    for (_, p) in accepted() {
        for s in sync_sites(&p).unwrap() {
            sites += 1;
            let ent = Entailer::new(&s.theory, &p.lattice).unwrap();
            let rel = |i: usize, j: usize| {
                SyncCx::new(&ent, &p.signature, &p.theories, false)
                    .sync(&s.env, &s.env, &s.branches[i].1, &s.branches[j].1, &s.d, &s.f)
                    .is_ok()
            };
            let n = s.branches.len();
            let m: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| rel(i, j)).collect()).collect();
            for i in 0..n {
                irreflexive += !m[i][i] as usize;
                for j in 0..n {
                    for k in 0..n {
                        intransitive += (m[i][j] && m[j][k] && !m[i][k]) as usize;
                    }
                }
            }
        }
    }
    outcome(
        asym + irreflexive + intransitive <= VIOLATIONS,
        format!("{SYNC_PAIRS} random pairs, {asym} asymmetric; {sites} corpus sites, {irreflexive} irreflexive, {intransitive} intransitive"),
    )
}

fn preservation_progress() -> Outcome {
    let (mut runs, mut errors, mut stuck, mut poised) = (0, Vec::new(), 0, 0);
    for (name, p) in accepted() {
        let m = Machine::new(&p);
        for seed in 0..SEEDS {
            runs += 1;
            match m.run(m.initial().unwrap(), &mut Scheduler::seeded(seed), STEPS, true) {
                Ok(r) => match r.status {
                    Status::Stuck => stuck += 1,
                    Status::Poised => poised += 1,
                    Status::Budget => {}
                },
                Err(e) => errors.push(format!("{name}/{seed}: {e}")),
            }
        }
    }
    outcome(
        errors.len() + stuck <= VIOLATIONS,
        format!(
            "{runs} runs x {STEPS} steps checked every step: {} typing failures, {stuck} stuck, {poised} poised halts {}",
            errors.len(),
            errors.first().map(String::as_str).unwrap_or("")
        ),
    )
}

fn confluence() -> Outcome {
    let (mut compared, mut bad) = (0, Vec::new());
    for (name, p) in accepted() {
        let per_chan: Vec<BTreeMap<String, Vec<String>>> = (0..SEEDS)
            .map(|s| {
                let mut m: BTreeMap<String, Vec<String>> = BTreeMap::new();
                for e in run_program(&p, Some(s), STEPS).unwrap().trace {
                    m.entry(e.base.to_string())
                        .or_default()
                        .push(format!("{}:{}", e.kind.as_str(), e.payload));
                }
                m
            })
            .collect();
        for a in &per_chan {
            for b in &per_chan {
                for (c, xs) in a {
                    let Some(ys) = b.get(c) else { continue };
                    compared += 1;
                    let k = xs.len().min(ys.len());
                    if xs[..k] != ys[..k] {
                        bad.push(format!("{name}: channel {c}"));
                    }
                }
            }
        }
    }
    outcome(
        bad.len() <= VIOLATIONS,
        format!(
            "{compared} channel comparisons over {SEEDS} seeds, {} disagreements {}",
            bad.len(),
            bad.first().map(String::as_str).unwrap_or("")
        ),
    )
}

fn psni() -> Outcome {
    let opts = ExploreOptions {
        max_events: NI_EVENTS,
        max_states: NI_STATES,
        ..Default::default()
    };
    let t = Instant::now();
    let mut notes = Vec::new();
    let mut ok = true;
    let mut states = 0;

    let (g, r) = (accepted_prog("survey_green"), accepted_prog("survey_red"));
    match ni_check(&g, &r, "guest", &opts) {
        Ok(Verdict::Equivalent { states: s, .. }) => {
            states = states.max(s);
            notes.push(format!("survey equivalent ({s} states)"));
        }
        other => {
            ok = false;
            notes.push(format!("survey: {other:?}"));
        }
    }
    for (a, b) in [("hasty_green", "hasty_red"), ("reckless_green", "reckless_red")] {
        let (pa, pb) = (unsafe_prog(a), unsafe_prog(b));
        match ni_check(&pa, &pb, "guest", &opts) {
            Ok(Verdict::Distinguished(w)) => {
                let shown: Vec<String> = w.observed.iter().map(|e| e.to_string()).collect();
                notes.push(format!("{a}/{b} distinguished by `{}`", shown.join(" ")));
                if a.starts_with("reckless") {
                    // u2 is asked before u1 has voted, and green cannot do that.
                    let u2 = shown.iter().position(|e| e.starts_with("u2."));
                    let u1_vote = shown.iter().position(|e| e == "u1.yes" || e == "u1.no");
                    let early = u2.is_some_and(|i| u1_vote.is_none_or(|v| i < v));
                    let m = Machine::new(&pa);
                    let green =
                        explore_traces(&m, m.initial().unwrap(), pa.lattice.level("guest").unwrap(), &opts).unwrap();
                    let absent = !green.prefixes.contains(&w.observed);
                    if !(early && absent) {
                        ok = false;
                        notes.push(format!(
                            "reckless witness shape wrong (u2 early: {early}, absent from green: {absent})"
                        ));
                    }
                }
            }
            other => {
                ok = false;
                notes.push(format!("{a}/{b}: {other:?}"));
            }
        }
    }
    let el = t.elapsed();
    ok &= el < NI_TIME && states < NI_STATES;
    outcome(
        ok,
        format!(
            "{}; {el:?} (limit {NI_TIME:?}), max {states} states (limit {NI_STATES})",
            notes.join("; ")
        ),
    )
}

fn accepted_prog(name: &str) -> Program {
    sintegrity::load(corpus::case(name).unwrap().source, CheckOptions::default()).unwrap()
}

fn forwarders() -> Outcome {
    let (mut n, mut bad) = (0, Vec::new());
    for c in load_corpus() {
        let Ok(mut p) = parser::parse_program(c.source) else {
            continue;
        };
        sintegrity::elaborate(&mut p);
        for d in p.signature.forwarders.values() {
            n += 1;
            if let Err(e) = check_definition(Env::of(&p), d, CheckOptions::default()) {
                bad.push(format!("{}/{}: {e}", c.name, d.name));
            }
        }
    }
    outcome(
        n > 0 && bad.len() <= VIOLATIONS,
        format!(
            "{n} generated forwarders, {} ill-typed {}",
            bad.len(),
            bad.first().map(String::as_str).unwrap_or("")
        ),
    )
}

fn determinism() -> Outcome {
    let mut diffs = 0;
    let mut runs = 0;
    for (_, p) in accepted() {
        for seed in [0, 7, 42] {
            let first = format_trace(&run_program(&p, Some(seed), STEPS).unwrap().trace);
            for _ in 1..REPEATS {
                runs += 1;
                diffs += (format_trace(&run_program(&p, Some(seed), STEPS).unwrap().trace) != first) as usize;
            }
        }
    }
    outcome(
        diffs <= VIOLATIONS,
        format!("{runs} repeated runs, {diffs} differing traces"),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("corpus verdicts", corpus_verdicts),
        ("lattice laws", lattice_laws),
        ("sync relation algebra", sync_algebra),
        ("preservation and progress", preservation_progress),
        ("per-channel confluence", confluence),
        ("empirical noninterference", psni),
        ("forwarder well-typedness", forwarders),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        failed += !o.pass as usize;
        println!(
            "{} {} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
