//! Forwarder processes. A forward is sugar for an identity expansion defined
//! by structural recursion on the session type; each type name `Y` gets a
//! polymorphic forwarder `F_Y` that the expansion calls when it reaches `Y`.

use std::sync::{Arc, OnceLock};

use crate::ast::{ChanDecl, Proc, ProcDef, Program, Span, Term};
use crate::ident::Ident;
use crate::security::{Relation, SecPair, SecTerm, SecurityTheory};
use crate::types::{SessionType, TypeDefs};

/// Name of the theory every forwarder is polymorphic over.
pub const FWD_THEORY: &str = "$fwd";

/// `{psi_c, psi_i | psi_i ⊑ psi_c}`. The relation is what makes the
/// forwarder's own declaration satisfy the minimal-integrity invariant.
pub fn forwarder_theory() -> &'static SecurityTheory {
    static TH: OnceLock<SecurityTheory> = OnceLock::new();
    TH.get_or_init(|| SecurityTheory {
        name: Ident::new(FWD_THEORY),
        vars: vec![Ident::new("psi_c"), Ident::new("psi_i")],
        relations: vec![Relation {
            lhs: SecTerm::var("psi_i"),
            rhs: SecTerm::var("psi_c"),
        }],
    })
}

pub fn forwarder_name(ty: &Ident) -> Ident {
    Ident::from(format!("F${ty}"))
}

fn relay_name() -> Ident {
    Ident::new("w$")
}

/// `fwder(A, offered ← used)`. Type names stop the recursion with a call to
/// the corresponding forwarder, which keeps the expansion finite.
pub fn fwder(ty: &SessionType, offered: &Ident, used: &Ident) -> Term {
    let p = match ty {
        SessionType::Plus(bs) => Proc::Case {
            chan: used.clone(),
            branches: bs
                .iter()
                .map(|(l, a)| {
                    let body = Arc::new(Proc::Select {
                        chan: offered.clone(),
                        label: l.clone(),
                        cont: fwder(a, offered, used),
                    });
                    (l.clone(), body)
                })
                .collect(),
        },
        SessionType::With(bs) => Proc::Case {
            chan: offered.clone(),
            branches: bs
                .iter()
                .map(|(l, a)| {
                    let body = Arc::new(Proc::Select {
                        chan: used.clone(),
                        label: l.clone(),
                        cont: fwder(a, offered, used),
                    });
                    (l.clone(), body)
                })
                .collect(),
        },
        SessionType::Tensor(_, b) => Proc::Recv {
            binder: relay_name(),
            chan: used.clone(),
            cont: Arc::new(Proc::Send {
                payload: relay_name(),
                chan: offered.clone(),
                cont: fwder(b, offered, used),
            }),
        },
        SessionType::Lolli(_, b) => Proc::Recv {
            binder: relay_name(),
            chan: offered.clone(),
            cont: Arc::new(Proc::Send {
                payload: relay_name(),
                chan: used.clone(),
                cont: fwder(b, offered, used),
            }),
        },
        SessionType::One => Proc::Wait {
            chan: used.clone(),
            cont: Arc::new(Proc::Close { chan: offered.clone() }),
        },
        SessionType::Var(y) => Proc::FwdCall {
            ty: y.clone(),
            offered: offered.clone(),
            used: used.clone(),
        },
    };
    Arc::new(p)
}

/// `F_Y`: offers `y : Y⟨psi_c, psi_i⟩` using `x : Y⟨psi_c, psi_i⟩`.
pub fn forwarder_def<D: TypeDefs>(defs: &D, ty: &Ident) -> Option<ProcDef> {
    let body_ty = defs.typedef(ty)?;
    let pair = SecPair::new(SecTerm::var("psi_c"), SecTerm::var("psi_i"));
    let (x, y) = (Ident::new("x"), Ident::new("y"));
    Some(ProcDef {
        name: forwarder_name(ty),
        theory: Ident::new(FWD_THEORY),
        offered: ChanDecl {
            name: y.clone(),
            ty: SessionType::Var(ty.clone()),
            sec: pair.clone(),
        },
        params: vec![ChanDecl {
            name: x.clone(),
            ty: SessionType::Var(ty.clone()),
            sec: pair.clone(),
        }],
        at: pair,
        body: fwder(body_ty, &y, &x),
        span: Span::default(),
    })
}

pub fn generate_forwarders(prog: &mut Program) {
    let names: Vec<Ident> = prog.signature.typedefs.iter().map(|(n, _)| n.clone()).collect();
    for n in names {
        if let Some(d) = forwarder_def(&prog.signature, &n) {
            prog.signature.forwarders.insert(n, d);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn unit_forwarder_waits_then_closes() {
        let t = fwder(&SessionType::One, &"y".into(), &"x".into());
        assert_eq!(
            *t,
            Proc::Wait {
                chan: "x".into(),
                cont: Arc::new(Proc::Close { chan: "y".into() })
            }
        );
    }

    #[test]
    fn choice_forwarder_relays_the_label() {
        let ty = SessionType::Plus(vec![("a".into(), SessionType::One)]);
        let t = fwder(&ty, &"y".into(), &"x".into());
        let expected = Proc::Case {
            chan: "x".into(),
            branches: vec![(
                "a".into(),
                Arc::new(Proc::Select {
                    chan: "y".into(),
                    label: "a".into(),
                    cont: fwder(&SessionType::One, &"y".into(), &"x".into()),
                }),
            )],
        };
        assert_eq!(*t, expected);
    }

    #[test]
    fn type_name_becomes_a_call() {
        let mut defs = BTreeMap::new();
        defs.insert(Ident::new("Y"), SessionType::var("Z"));
        defs.insert(Ident::new("Z"), SessionType::One);
        let d = forwarder_def(&defs, &"Y".into()).unwrap();
        assert_eq!(
            *d.body,
            Proc::FwdCall {
                ty: "Z".into(),
                offered: "y".into(),
                used: "x".into()
            }
        );
        assert_eq!(d.name.as_str(), "F$Y");
    }
}
