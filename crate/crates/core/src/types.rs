//! Session types with equi-recursive definitions.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::ident::Ident;

#[derive(Clone, PartialEq, Eq, Hash)]
pub enum SessionType {
    Plus(Vec<(Ident, SessionType)>),
    With(Vec<(Ident, SessionType)>),
    Tensor(Box<SessionType>, Box<SessionType>),
    Lolli(Box<SessionType>, Box<SessionType>),
    One,
    Var(Ident),
}

impl SessionType {
    pub fn var(n: &str) -> Self {
        SessionType::Var(Ident::new(n))
    }

    pub fn branch(&self, label: &str) -> Option<&SessionType> {
        match self {
            SessionType::Plus(bs) | SessionType::With(bs) => {
                bs.iter().find(|(l, _)| l.as_str() == label).map(|(_, t)| t)
            }
            _ => None,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, nested: bool) -> fmt::Result {
        match self {
            SessionType::One => f.write_str("unit"),
            SessionType::Var(v) => write!(f, "{v}"),
            SessionType::Plus(bs) | SessionType::With(bs) => {
                let sym = if matches!(self, SessionType::Plus(_)) { "+" } else { "&" };
                write!(f, "{sym}{{")?;
                for (i, (l, t)) in bs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" | ")?;
                    }
                    write!(f, "{l} -> ")?;
                    t.fmt_prec(f, false)?;
                }
                f.write_str("}")
            }
            SessionType::Tensor(a, b) | SessionType::Lolli(a, b) => {
                let op = if matches!(self, SessionType::Tensor(..)) {
                    "*"
                } else {
                    "-o"
                };
                if nested {
                    f.write_str("(")?;
                }
                a.fmt_prec(f, true)?;
                write!(f, " {op} ")?;
                b.fmt_prec(f, false)?;
                if nested {
                    f.write_str(")")?;
                }
                Ok(())
            }
        }
    }
}

/// Concrete syntax; binary connectives associate to the right.
impl fmt::Display for SessionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, false)
    }
}

impl fmt::Debug for SessionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeDefError {
    #[error("unknown session type `{0}`")]
    UnknownTypeVar(Ident),
    #[error("type definitions are not contractive: {}", fmt_cycle(.0))]
    NonContractive(Vec<Ident>),
    #[error("choice type with no branches in `{0}`")]
    EmptyChoice(Ident),
    #[error("duplicate label `{label}` in `{def}`")]
    DuplicateLabel { def: Ident, label: Ident },
}

fn fmt_cycle(c: &[Ident]) -> String {
    c.iter().map(|i| i.as_str()).collect::<Vec<_>>().join(" = ")
}

/// Lookup of type definitions; the signature implements it.
pub trait TypeDefs {
    fn typedef(&self, name: &str) -> Option<&SessionType>;
}

impl TypeDefs for BTreeMap<Ident, SessionType> {
    fn typedef(&self, name: &str) -> Option<&SessionType> {
        self.get(name)
    }
}

/// Upper bound on consecutive head unfoldings; contractive signatures need
/// at most one per definition.
pub const UNFOLD_FUEL: usize = 4096;

/// One unfolding step: a variable becomes its definition.
pub fn unfold<'a, D: TypeDefs>(defs: &'a D, t: &'a SessionType) -> Result<&'a SessionType, TypeDefError> {
    match t {
        SessionType::Var(y) => defs.typedef(y).ok_or_else(|| TypeDefError::UnknownTypeVar(y.clone())),
        _ => Ok(t),
    }
}

/// Unfolds until the head is structural. Terminates on contractive definitions;
/// the fuel bound guards against unchecked input.
pub fn unfold_head<'a, D: TypeDefs>(
    defs: &'a D,
    mut t: &'a SessionType,
    fuel: usize,
) -> Result<&'a SessionType, TypeDefError> {
    let mut seen = Vec::new();
    for _ in 0..=fuel {
        match t {
            SessionType::Var(y) => {
                seen.push(y.clone());
                t = unfold(defs, t)?;
            }
            _ => return Ok(t),
        }
    }
    Err(TypeDefError::NonContractive(seen))
}

/// Rejects definitions that reach a variable cycle without passing through a
/// connective. Edges are `Y -> Z` when `Y = Z` literally.
pub fn contractive_check<'a, I>(defs: I) -> Result<(), TypeDefError>
where
    I: IntoIterator<Item = (&'a Ident, &'a SessionType)>,
{
    let edges: BTreeMap<&Ident, &Ident> = defs
        .into_iter()
        .filter_map(|(n, t)| match t {
            SessionType::Var(z) => Some((n, z)),
            _ => None,
        })
        .collect();
    let mut done: HashSet<&Ident> = HashSet::new();
    for start in edges.keys() {
        if done.contains(start) {
            continue;
        }
        let mut path: Vec<&Ident> = Vec::new();
        let mut cur = *start;
        loop {
            if let Some(pos) = path.iter().position(|p| *p == cur) {
                return Err(TypeDefError::NonContractive(
                    path[pos..].iter().map(|i| (*i).clone()).collect(),
                ));
            }
            if done.contains(cur) {
                break;
            }
            path.push(cur);
            match edges.get(cur) {
                Some(next) => cur = next,
                None => break,
            }
        }
        done.extend(path);
    }
    Ok(())
}

/// Validates label sets and variable references of one definition body.
pub fn well_formed<D: TypeDefs>(defs: &D, owner: &Ident, t: &SessionType) -> Result<(), TypeDefError> {
    match t {
        SessionType::One => Ok(()),
        SessionType::Var(y) => match defs.typedef(y) {
            Some(_) => Ok(()),
            None => Err(TypeDefError::UnknownTypeVar(y.clone())),
        },
        SessionType::Plus(bs) | SessionType::With(bs) => {
            if bs.is_empty() {
                return Err(TypeDefError::EmptyChoice(owner.clone()));
            }
            let mut seen = HashSet::new();
            for (l, bt) in bs {
                if !seen.insert(l) {
                    return Err(TypeDefError::DuplicateLabel {
                        def: owner.clone(),
                        label: l.clone(),
                    });
                }
                well_formed(defs, owner, bt)?;
            }
            Ok(())
        }
        SessionType::Tensor(a, b) | SessionType::Lolli(a, b) => {
            well_formed(defs, owner, a)?;
            well_formed(defs, owner, b)
        }
    }
}

/// Coinductive equality up to unfolding.
pub fn type_equal<D: TypeDefs>(defs: &D, a: &SessionType, b: &SessionType) -> bool {
    let mut visited: HashSet<(SessionType, SessionType)> = HashSet::new();
    eq_rec(defs, a, b, &mut visited)
}

fn eq_rec<D: TypeDefs>(
    defs: &D,
    a: &SessionType,
    b: &SessionType,
    visited: &mut HashSet<(SessionType, SessionType)>,
) -> bool {
    if a == b {
        return true;
    }
    let key = (a.clone(), b.clone());
    if visited.contains(&key) {
        return true;
    }
    visited.insert(key);
    let (Ok(ua), Ok(ub)) = (unfold_head(defs, a, UNFOLD_FUEL), unfold_head(defs, b, UNFOLD_FUEL)) else {
        return false;
    };
    match (ua, ub) {
        (SessionType::One, SessionType::One) => true,
        (SessionType::Plus(x), SessionType::Plus(y)) | (SessionType::With(x), SessionType::With(y)) => {
            x.len() == y.len()
                && x.iter().all(|(l, t)| match y.iter().find(|(m, _)| m == l) {
                    Some((_, u)) => eq_rec(defs, t, u, visited),
                    None => false,
                })
        }
        (SessionType::Tensor(a1, b1), SessionType::Tensor(a2, b2))
        | (SessionType::Lolli(a1, b1), SessionType::Lolli(a2, b2)) => {
            eq_rec(defs, a1, a2, visited) && eq_rec(defs, b1, b2, visited)
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defs(list: &[(&str, SessionType)]) -> BTreeMap<Ident, SessionType> {
        list.iter().map(|(n, t)| (Ident::new(n), t.clone())).collect()
    }

    fn plus(bs: &[(&str, SessionType)]) -> SessionType {
        SessionType::Plus(bs.iter().map(|(l, t)| (Ident::new(l), t.clone())).collect())
    }

    #[test]
    fn contractiveness() {
        let d = defs(&[("Y", plus(&[("a", SessionType::var("Y"))]))]);
        assert!(contractive_check(&d).is_ok());
        let d = defs(&[("Y", SessionType::var("Y"))]);
        assert_eq!(
            contractive_check(&d).unwrap_err(),
            TypeDefError::NonContractive(vec!["Y".into()])
        );
        let d = defs(&[("Y", SessionType::var("Z")), ("Z", SessionType::var("Y"))]);
        assert_eq!(
            contractive_check(&d).unwrap_err(),
            TypeDefError::NonContractive(vec!["Y".into(), "Z".into()])
        );
        let d = defs(&[("Y", SessionType::var("Z")), ("Z", SessionType::One)]);
        assert!(contractive_check(&d).is_ok());
    }

    #[test]
    fn unfolding() {
        let d = defs(&[("Y", SessionType::var("Z")), ("Z", plus(&[("a", SessionType::One)]))]);
        let y = SessionType::var("Y");
        assert_eq!(unfold(&d, &y).unwrap(), &SessionType::var("Z"));
        assert_eq!(
            unfold(&d, unfold(&d, &y).unwrap()).unwrap(),
            &plus(&[("a", SessionType::One)])
        );
        assert_eq!(unfold(&d, &SessionType::One).unwrap(), &SessionType::One);
        assert!(matches!(
            unfold(&d, &SessionType::var("Q")),
            Err(TypeDefError::UnknownTypeVar(_))
        ));
    }

    #[test]
    fn equality_up_to_unfolding() {
        let y = SessionType::var("Y");
        let d = defs(&[("Y", plus(&[("a", y.clone())]))]);
        assert!(type_equal(&d, &y, &plus(&[("a", y.clone())])));
        assert!(type_equal(
            &d,
            &plus(&[("a", y.clone())]),
            &plus(&[("a", plus(&[("a", y.clone())]))])
        ));
        assert!(!type_equal(&d, &y, &SessionType::One));
        // Two differently named but equal streams.
        let d = defs(&[
            ("S", plus(&[("a", SessionType::var("T"))])),
            ("T", plus(&[("a", SessionType::var("S"))])),
        ]);
        assert!(type_equal(&d, &SessionType::var("S"), &SessionType::var("T")));
    }

    #[test]
    fn label_order_is_irrelevant() {
        let d = defs(&[]);
        let a = plus(&[("a", SessionType::One), ("b", SessionType::One)]);
        let b = plus(&[("b", SessionType::One), ("a", SessionType::One)]);
        assert!(type_equal(&d, &a, &b));
    }
}
