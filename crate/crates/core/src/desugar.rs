//! Tail-call elimination: `instantiate x = X[γ](Δ)` in tail position becomes
//! a spawn on a fresh channel followed by a forward.

use std::sync::Arc;

use crate::ast::{Proc, Program, Term};
use crate::ident::Ident;

/// Fresh names contain `$`, which the lexer never produces, so they cannot
/// collide with source identifiers.
#[derive(Debug, Default, Clone)]
pub struct Fresh {
    next: usize,
}

impl Fresh {
    pub fn new() -> Self {
        Fresh::default()
    }

    pub fn name(&mut self, base: &Ident) -> Ident {
        self.next += 1;
        let stem = base.as_str().split('$').next().unwrap_or("");
        Ident::from(format!("{stem}${}", self.next))
    }
}

/// The spawn-plus-forward expansion of one tail call.
pub fn expand_tail_call(
    chan: &Ident,
    fresh_chan: Ident,
    proc: &Ident,
    subst: &[crate::security::SecTerm],
    args: &[Ident],
) -> Proc {
    Proc::Spawn {
        binder: fresh_chan.clone(),
        proc: proc.clone(),
        subst: subst.to_vec(),
        args: args.to_vec(),
        cont: Arc::new(Proc::Forward {
            offered: chan.clone(),
            used: fresh_chan,
        }),
    }
}

pub fn desugar_tail_calls(t: &Term, fresh: &mut Fresh) -> Term {
    let p = match &**t {
        Proc::TailCall {
            chan,
            proc,
            subst,
            args,
        } => {
            let z = fresh.name(chan);
            expand_tail_call(chan, z, proc, subst, args)
        }
        Proc::Select { chan, label, cont } => Proc::Select {
            chan: chan.clone(),
            label: label.clone(),
            cont: desugar_tail_calls(cont, fresh),
        },
        Proc::Case { chan, branches } => Proc::Case {
            chan: chan.clone(),
            branches: branches
                .iter()
                .map(|(l, b)| (l.clone(), desugar_tail_calls(b, fresh)))
                .collect(),
        },
        Proc::Send { payload, chan, cont } => Proc::Send {
            payload: payload.clone(),
            chan: chan.clone(),
            cont: desugar_tail_calls(cont, fresh),
        },
        Proc::Recv { binder, chan, cont } => Proc::Recv {
            binder: binder.clone(),
            chan: chan.clone(),
            cont: desugar_tail_calls(cont, fresh),
        },
        Proc::Wait { chan, cont } => Proc::Wait {
            chan: chan.clone(),
            cont: desugar_tail_calls(cont, fresh),
        },
        Proc::Spawn {
            binder,
            proc,
            subst,
            args,
            cont,
        } => Proc::Spawn {
            binder: binder.clone(),
            proc: proc.clone(),
            subst: subst.clone(),
            args: args.clone(),
            cont: desugar_tail_calls(cont, fresh),
        },
        Proc::Close { .. } | Proc::Forward { .. } | Proc::FwdCall { .. } => return t.clone(),
    };
    Arc::new(p)
}

pub fn has_tail_calls(t: &Term) -> bool {
    match &**t {
        Proc::TailCall { .. } => true,
        Proc::Case { branches, .. } => branches.iter().any(|(_, b)| has_tail_calls(b)),
        Proc::Select { cont, .. }
        | Proc::Send { cont, .. }
        | Proc::Recv { cont, .. }
        | Proc::Wait { cont, .. }
        | Proc::Spawn { cont, .. } => has_tail_calls(cont),
        Proc::Close { .. } | Proc::Forward { .. } | Proc::FwdCall { .. } => false,
    }
}

/// Desugars every process body, sharing one counter across the program.
pub fn desugar_program(prog: &mut Program) {
    let mut fresh = Fresh::new();
    for d in &mut prog.signature.procdefs {
        d.body = desugar_tail_calls(&d.body, &mut fresh);
    }
}

/// Rewrites `X[]` spawns over the spawner's own theory into the explicit
/// identity, so that a later substitution of the body reaches them.
pub fn explicit_identity(prog: &mut Program) {
    let theory_of: std::collections::BTreeMap<Ident, Ident> = prog
        .signature
        .procdefs
        .iter()
        .map(|d| (d.name.clone(), d.theory.clone()))
        .collect();
    let vars_of = |th: &Ident| -> Vec<crate::security::SecTerm> {
        prog.theory(th.as_str())
            .map(|t| {
                t.vars
                    .iter()
                    .map(|v| crate::security::SecTerm::Var(v.clone()))
                    .collect()
            })
            .unwrap_or_default()
    };
    let mut rewrites = Vec::new();
    for (i, d) in prog.signature.procdefs.iter().enumerate() {
        let ids = vars_of(&d.theory);
        if ids.is_empty() {
            continue;
        }
        let body = fill_identity(
            &d.body,
            &|callee: &Ident| theory_of.get(callee) == Some(&d.theory),
            &ids,
        );
        rewrites.push((i, body));
    }
    for (i, body) in rewrites {
        prog.signature.procdefs[i].body = body;
    }
}

fn fill_identity(t: &Term, same: &dyn Fn(&Ident) -> bool, ids: &[crate::security::SecTerm]) -> Term {
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
            subst: if subst.is_empty() && same(proc) {
                ids.to_vec()
            } else {
                subst.clone()
            },
            args: args.clone(),
            cont: fill_identity(cont, same, ids),
        },
        Proc::TailCall {
            chan,
            proc,
            subst,
            args,
        } => Proc::TailCall {
            chan: chan.clone(),
            proc: proc.clone(),
            subst: if subst.is_empty() && same(proc) {
                ids.to_vec()
            } else {
                subst.clone()
            },
            args: args.clone(),
        },
        Proc::Select { chan, label, cont } => Proc::Select {
            chan: chan.clone(),
            label: label.clone(),
            cont: fill_identity(cont, same, ids),
        },
        Proc::Case { chan, branches } => Proc::Case {
            chan: chan.clone(),
            branches: branches
                .iter()
                .map(|(l, b)| (l.clone(), fill_identity(b, same, ids)))
                .collect(),
        },
        Proc::Send { payload, chan, cont } => Proc::Send {
            payload: payload.clone(),
            chan: chan.clone(),
            cont: fill_identity(cont, same, ids),
        },
        Proc::Recv { binder, chan, cont } => Proc::Recv {
            binder: binder.clone(),
            chan: chan.clone(),
            cont: fill_identity(cont, same, ids),
        },
        Proc::Wait { chan, cont } => Proc::Wait {
            chan: chan.clone(),
            cont: fill_identity(cont, same, ids),
        },
        Proc::Close { .. } | Proc::Forward { .. } | Proc::FwdCall { .. } => return t.clone(),
    };
    Arc::new(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::security::SecTerm;

    fn tail(chan: &str) -> Term {
        Arc::new(Proc::TailCall {
            chan: chan.into(),
            proc: "A".into(),
            subst: vec![SecTerm::level("t")],
            args: vec!["w1".into(), "w2".into()],
        })
    }

    #[test]
    fn tail_call_becomes_spawn_and_forward() {
        let mut f = Fresh::new();
        let out = desugar_tail_calls(&tail("z"), &mut f);
        match &*out {
            Proc::Spawn {
                binder,
                proc,
                args,
                cont,
                ..
            } => {
                assert_eq!(binder.as_str(), "z$1");
                assert_eq!(proc.as_str(), "A");
                assert_eq!(args.len(), 2);
                assert_eq!(
                    **cont,
                    Proc::Forward {
                        offered: "z".into(),
                        used: "z$1".into()
                    }
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn branches_get_distinct_names_and_pass_is_idempotent() {
        let t: Term = Arc::new(Proc::Case {
            chan: "x".into(),
            branches: vec![("a".into(), tail("z")), ("b".into(), tail("z"))],
        });
        let mut f = Fresh::new();
        let once = desugar_tail_calls(&t, &mut f);
        let Proc::Case { branches, .. } = &*once else { panic!() };
        let names: Vec<_> = branches
            .iter()
            .map(|(_, b)| match &**b {
                Proc::Spawn { binder, .. } => binder.clone(),
                _ => panic!(),
            })
            .collect();
        assert_ne!(names[0], names[1]);
        assert!(!has_tail_calls(&once));
        assert_eq!(desugar_tail_calls(&once, &mut f), once);
    }

    #[test]
    fn no_tail_calls_unchanged() {
        let t: Term = Arc::new(Proc::Close { chan: "x".into() });
        assert_eq!(desugar_tail_calls(&t, &mut Fresh::new()), t);
    }
}
