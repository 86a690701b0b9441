//! The golden programs, embedded from `examples/`.

use crate::typecheck::CheckOptions;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Expect {
    Accept,
    /// Rejected with the given error class.
    Reject(&'static str),
}

/// A noninterference expectation against another corpus entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NiExpect {
    pub observer: &'static str,
    pub other: &'static str,
    pub equivalent: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct GoldenCase {
    pub name: &'static str,
    pub source: &'static str,
    pub expected: Expect,
    pub ni_expect: Option<NiExpect>,
}

macro_rules! example {
    ($f:literal) => {
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $f, ".sint"))
    };
}

const fn ni(other: &'static str, equivalent: bool) -> Option<NiExpect> {
    Some(NiExpect {
        observer: "guest",
        other,
        equivalent,
    })
}

pub fn load_corpus() -> Vec<GoldenCase> {
    use Expect::*;
    vec![
        GoldenCase {
            name: "survey_green",
            source: example!("survey_green"),
            expected: Accept,
            ni_expect: ni("survey_red", true),
        },
        GoldenCase {
            name: "survey_red",
            source: example!("survey_red"),
            expected: Accept,
            ni_expect: None,
        },
        GoldenCase {
            name: "hasty_green",
            source: example!("hasty_green"),
            expected: Reject("SyncPatternViolation"),
            ni_expect: ni("hasty_red", false),
        },
        GoldenCase {
            name: "hasty_red",
            source: example!("hasty_red"),
            expected: Reject("SyncPatternViolation"),
            ni_expect: None,
        },
        GoldenCase {
            name: "reckless_green",
            source: example!("reckless_green"),
            expected: Reject("SyncPatternViolation"),
            ni_expect: ni("reckless_red", false),
        },
        GoldenCase {
            name: "reckless_red",
            source: example!("reckless_red"),
            expected: Reject("SyncPatternViolation"),
            ni_expect: None,
        },
        GoldenCase {
            name: "bank",
            source: example!("bank"),
            expected: Accept,
            ni_expect: None,
        },
        GoldenCase {
            name: "mutual",
            source: example!("mutual"),
            expected: Accept,
            ni_expect: None,
        },
        GoldenCase {
            name: "handoff",
            source: example!("handoff"),
            expected: Accept,
            ni_expect: None,
        },
        GoldenCase {
            name: "two_tops",
            source: example!("two_tops"),
            expected: Reject("NoUniqueJoin"),
            ni_expect: None,
        },
    ]
}

pub fn case(name: &str) -> Option<GoldenCase> {
    load_corpus().into_iter().find(|c| c.name == name)
}

/// Error class of a load failure, in the vocabulary of [`Expect::Reject`].
pub fn error_class(e: &Error) -> &'static str {
    use crate::lattice::LatticeError;
    use crate::parser::ParseError;
    match e {
        Error::Parse(ParseError::Lattice { source, .. }) => match source {
            LatticeError::Empty => "EmptyLattice",
            LatticeError::DuplicateLevel(_) => "DuplicateLevel",
            LatticeError::UnknownAncestor { .. } => "UnknownAncestor",
            LatticeError::NoUniqueJoin(..) => "NoUniqueJoin",
            LatticeError::TooManyLevels => "TooManyLevels",
        },
        Error::Parse(_) => "ParseError",
        Error::Type(t) => t.kind(),
        Error::Runtime(_) => "RuntimeError",
        Error::Ni(_) => "NiError",
    }
}

/// Checks a case against its expected verdict; returns the observed class.
pub fn verdict(c: &GoldenCase) -> Result<(), String> {
    let got = crate::load(c.source, CheckOptions::default());
    match (c.expected, &got) {
        (Expect::Accept, Ok(_)) => Ok(()),
        (Expect::Reject(want), Err(e)) if error_class(e) == want => Ok(()),
        (Expect::Accept, Err(e)) => Err(format!("{}: expected accept, got {e}", c.name)),
        (Expect::Reject(want), Err(e)) => Err(format!("{}: expected {want}, got {}: {e}", c.name, error_class(e))),
        (Expect::Reject(want), Ok(_)) => Err(format!("{}: expected {want}, but it was accepted", c.name)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdicts() {
        let fails: Vec<String> = load_corpus().iter().filter_map(|c| verdict(c).err()).collect();
        assert!(fails.is_empty(), "{}", fails.join("\n"));
    }
}
