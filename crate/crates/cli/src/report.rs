//! Text and JSON renderings of command outcomes.
//!
//! JSON output carries `"schema": SCHEMA`; fields are only ever added.

use std::path::Path;

use serde::Serialize;
use sintegrity::corpus::error_class;
use sintegrity::niharness::{Side, Verdict};
use sintegrity::runtime::TraceEvent;
use sintegrity::{Error, Program};

pub const SCHEMA: u32 = 1;

#[derive(Serialize)]
pub struct Diagnostic {
    pub class: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub definition: Option<String>,
    /// `line:col` of the offending definition or token.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span: Option<String>,
}

#[derive(Serialize)]
pub struct Summary {
    pub levels: usize,
    pub typedefs: usize,
    pub procdefs: usize,
}

#[derive(Serialize)]
pub struct Report {
    pub schema: u32,
    pub file: String,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<Summary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<Diagnostic>,
}

impl Report {
    pub fn accepted(path: &Path, p: &Program) -> Self {
        Report {
            schema: SCHEMA,
            file: path.display().to_string(),
            status: "accepted",
            summary: Some(Summary {
                levels: p.lattice.len(),
                typedefs: p.signature.typedefs.len(),
                procdefs: p.signature.procdefs.len(),
            }),
            error: None,
        }
    }

    pub fn rejected(path: &Path, e: &Error) -> Self {
        let (rule, definition, span) = match e {
            Error::Type(t) => (
                t.rule().map(str::to_string),
                t.loc().map(|l| l.def.to_string()),
                t.loc().map(|l| l.span.to_string()),
            ),
            Error::Parse(p) => (None, None, Some(p.span().to_string())),
            _ => (None, None, None),
        };
        Report {
            schema: SCHEMA,
            file: path.display().to_string(),
            status: "rejected",
            summary: None,
            error: Some(Diagnostic {
                class: error_class(e),
                message: e.to_string(),
                rule,
                definition,
                span,
            }),
        }
    }

    pub fn text(&self) -> String {
        match (&self.summary, &self.error) {
            (Some(s), _) => format!(
                "{}: ok ({} levels, {} types, {} processes)",
                self.file, s.levels, s.typedefs, s.procdefs
            ),
            (_, Some(d)) => format!("{}: {}: {}", self.file, d.class, d.message),
            _ => format!("{}: {}", self.file, self.status),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

#[derive(Serialize)]
struct Event {
    step: usize,
    chan: String,
    gen: u32,
    sec: [String; 2],
    kind: &'static str,
    payload: String,
}

impl From<&TraceEvent> for Event {
    fn from(e: &TraceEvent) -> Self {
        Event {
            step: e.step,
            chan: e.base.to_string(),
            gen: e.gen,
            sec: [e.sec.0.to_string(), e.sec.1.to_string()],
            kind: e.kind.as_str(),
            payload: e.payload.clone(),
        }
    }
}

pub fn run_json(path: &Path, status: &str, steps: usize, trace: &[TraceEvent]) -> String {
    serde_json::json!({
        "schema": SCHEMA,
        "file": path.display().to_string(),
        "status": status,
        "steps": steps,
        "trace": trace.iter().map(Event::from).collect::<Vec<_>>(),
    })
    .to_string()
}

pub fn verdict_json(v: &Verdict) -> String {
    let body = match v {
        Verdict::Equivalent { depth, states } => serde_json::json!({
            "schema": SCHEMA,
            "verdict": "equivalent",
            "depth": depth,
            "states": states,
        }),
        Verdict::Distinguished(w) => serde_json::json!({
            "schema": SCHEMA,
            "verdict": "distinguished",
            "side": match w.side { Side::A => "a", Side::B => "b" },
            "quiescent": w.quiescent,
            "observed": w.observed.iter().map(|o| o.to_string()).collect::<Vec<_>>(),
            "trace": w.trace.iter().map(Event::from).collect::<Vec<_>>(),
            "schedule": w.schedule,
        }),
    };
    body.to_string()
}
