//! Concrete secrecy lattice.
//!
//! Levels are declared top first, each naming its immediate ancestors. The
//! declaration order doubles as a topological order, which is what makes the
//! incremental join check sound: a newly added level is minimal, so it cannot
//! change the join of any earlier pair.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::ident::Ident;

/// Hard cap on the number of levels; up-sets are stored as `u64` masks.
pub const MAX_LEVELS: usize = 64;

/// Index of a level inside its lattice.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Level(pub u8);

impl Level {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One `#name < (#a, #b)` entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelDecl {
    pub name: Ident,
    pub ancestors: Vec<Ident>,
}

impl LevelDecl {
    pub fn new(name: &str, ancestors: &[&str]) -> Self {
        LevelDecl {
            name: Ident::new(name),
            ancestors: ancestors.iter().map(|a| Ident::new(a)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LatticeError {
    #[error("secrecy block declares no levels")]
    Empty,
    #[error("level #{0} declared twice")]
    DuplicateLevel(Ident),
    #[error("level #{level} lists unknown ancestor #{ancestor}")]
    UnknownAncestor { level: Ident, ancestor: Ident },
    #[error("levels #{0} and #{1} have no unique join")]
    NoUniqueJoin(Ident, Ident),
    #[error("lattice has more than {MAX_LEVELS} levels")]
    TooManyLevels,
}

/// A validated join-semilattice of secrecy levels.
#[derive(Clone, PartialEq, Eq)]
pub struct ConcreteLattice {
    decls: Vec<LevelDecl>,
    index: HashMap<Ident, Level>,
    /// `up[a]` has bit `b` set iff `a ⊑ b`.
    up: Vec<u64>,
    join: Vec<Vec<Level>>,
}

impl fmt::Debug for ConcreteLattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(self.decls.iter().map(|d| d.name.as_str()))
            .finish()
    }
}

/// Least element of `ubs` below every other member, if any.
fn least_of(up: &[u64], ubs: u64) -> Option<usize> {
    let mut bits = ubs;
    while bits != 0 {
        let c = bits.trailing_zeros() as usize;
        if up[c] & ubs == ubs {
            return Some(c);
        }
        bits &= bits - 1;
    }
    None
}

pub fn validate_lattice(decls: &[LevelDecl]) -> Result<ConcreteLattice, LatticeError> {
    if decls.is_empty() {
        return Err(LatticeError::Empty);
    }
    if decls.len() > MAX_LEVELS {
        return Err(LatticeError::TooManyLevels);
    }
    let mut index: HashMap<Ident, Level> = HashMap::new();
    let mut up: Vec<u64> = Vec::with_capacity(decls.len());
    for (k, d) in decls.iter().enumerate() {
        if index.contains_key(&d.name) {
            return Err(LatticeError::DuplicateLevel(d.name.clone()));
        }
        let mut mask = 1u64 << k;
        for a in &d.ancestors {
            let Some(&l) = index.get(a) else {
                return Err(LatticeError::UnknownAncestor {
                    level: d.name.clone(),
                    ancestor: a.clone(),
                });
            };
            mask |= up[l.index()];
        }
        up.push(mask);
        index.insert(d.name.clone(), Level(k as u8));
        // The new level is minimal in the prefix; only pairs involving it
        // can lack a join.
        for j in 0..k {
            if least_of(&up, up[j] & up[k]).is_none() {
                return Err(LatticeError::NoUniqueJoin(decls[j].name.clone(), d.name.clone()));
            }
        }
    }
    let n = decls.len();
    let mut join = vec![vec![Level(0); n]; n];
    for a in 0..n {
        for b in 0..n {
            let l = least_of(&up, up[a] & up[b]).expect("checked above");
            join[a][b] = Level(l as u8);
        }
    }
    Ok(ConcreteLattice {
        decls: decls.to_vec(),
        index,
        up,
        join,
    })
}

impl ConcreteLattice {
    pub fn len(&self) -> usize {
        self.decls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decls.is_empty()
    }

    pub fn decls(&self) -> &[LevelDecl] {
        &self.decls
    }

    pub fn level(&self, name: &str) -> Option<Level> {
        self.index.get(name).copied()
    }

    pub fn name(&self, l: Level) -> &Ident {
        &self.decls[l.index()].name
    }

    pub fn levels(&self) -> impl Iterator<Item = Level> + '_ {
        (0..self.decls.len()).map(|i| Level(i as u8))
    }

    pub fn leq(&self, a: Level, b: Level) -> bool {
        self.up[a.index()] & (1u64 << b.index()) != 0
    }

    pub fn join(&self, a: Level, b: Level) -> Level {
        self.join[a.index()][b.index()]
    }

    /// The unique maximal level (first declared).
    pub fn top(&self) -> Level {
        Level(0)
    }

    /// Level-name edges `lower ⊑ upper` of the full order.
    pub fn edges(&self) -> Vec<(Ident, Ident)> {
        let mut out = Vec::new();
        for a in self.levels() {
            for b in self.levels() {
                if a != b && self.leq(a, b) {
                    out.push((self.name(a).clone(), self.name(b).clone()));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn example() -> ConcreteLattice {
        validate_lattice(&[
            LevelDecl::new("bank", &[]),
            LevelDecl::new("alice", &["bank"]),
            LevelDecl::new("bob", &["bank"]),
            LevelDecl::new("guest", &["alice", "bob"]),
        ])
        .unwrap()
    }

    #[test]
    fn four_point_lattice_joins() {
        let l = example();
        let lv = |n| l.level(n).unwrap();
        assert_eq!(l.join(lv("guest"), lv("alice")), lv("alice"));
        assert_eq!(l.join(lv("alice"), lv("bob")), lv("bank"));
        assert_eq!(l.join(lv("bob"), lv("bob")), lv("bob"));
        assert!(l.leq(lv("guest"), lv("bank")));
        assert!(!l.leq(lv("alice"), lv("bob")));
    }

    #[test]
    fn single_level() {
        let l = validate_lattice(&[LevelDecl::new("top", &[])]).unwrap();
        assert_eq!(l.len(), 1);
        assert_eq!(l.join(Level(0), Level(0)), Level(0));
    }

    #[test]
    fn two_tops_rejected() {
        let e = validate_lattice(&[LevelDecl::new("a", &[]), LevelDecl::new("b", &[])]).unwrap_err();
        assert_eq!(e, LatticeError::NoUniqueJoin("a".into(), "b".into()));
    }

    #[test]
    fn diamond_without_bottom_join_is_fine_but_crossing_is_not() {
        // a, b both below c and d: {a,b} has two minimal upper bounds.
        let e = validate_lattice(&[
            LevelDecl::new("t", &[]),
            LevelDecl::new("c", &["t"]),
            LevelDecl::new("d", &["t"]),
            LevelDecl::new("a", &["c", "d"]),
            LevelDecl::new("b", &["c", "d"]),
        ])
        .unwrap_err();
        assert_eq!(e, LatticeError::NoUniqueJoin("a".into(), "b".into()));
    }

    #[test]
    fn declaration_errors() {
        assert_eq!(validate_lattice(&[]).unwrap_err(), LatticeError::Empty);
        assert_eq!(
            validate_lattice(&[LevelDecl::new("a", &[]), LevelDecl::new("a", &[])]).unwrap_err(),
            LatticeError::DuplicateLevel("a".into())
        );
        assert!(matches!(
            validate_lattice(&[LevelDecl::new("a", &["b"])]).unwrap_err(),
            LatticeError::UnknownAncestor { .. }
        ));
        let many: Vec<LevelDecl> = (0..65)
            .map(|i| {
                let name = format!("l{i}");
                let prev = format!("l{}", i.max(1) - 1);
                LevelDecl {
                    name: name.into(),
                    ancestors: if i == 0 { vec![] } else { vec![prev.into()] },
                }
            })
            .collect();
        assert_eq!(validate_lattice(&many).unwrap_err(), LatticeError::TooManyLevels);
        assert_eq!(validate_lattice(&many[..64]).unwrap().len(), 64);
    }
}
