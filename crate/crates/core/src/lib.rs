//! Security-annotated session types with regrading policies: a parser and
//! pretty-printer, an information-flow type checker with synchronization
//! pattern checks, an asynchronous interpreter and a bounded
//! noninterference harness.

// Errors carry full diagnostic context; they are rare and not on hot paths.
#![allow(clippy::result_large_err)]

pub mod ast;
pub mod corpus;
pub mod desugar;
pub mod forwarders;
pub mod ident;
pub mod lattice;
pub mod lexer;
pub mod niharness;
pub mod parser;
pub mod pretty;
pub mod runtime;
pub mod security;
pub mod synccheck;
pub mod typecheck;
pub mod types;

use thiserror::Error;

pub use ast::Program;
pub use ident::Ident;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {0}")]
    Parse(#[from] parser::ParseError),
    #[error(transparent)]
    Type(#[from] typecheck::TypeError),
    #[error(transparent)]
    Runtime(#[from] runtime::RuntimeError),
    #[error(transparent)]
    Ni(#[from] niharness::NiError),
}

/// Prepares a parsed program for checking and execution: tail calls become
/// spawn plus forward, identity shorthands become explicit, and one
/// forwarder per type definition is generated.
pub fn elaborate(prog: &mut Program) {
    desugar::explicit_identity(prog);
    desugar::desugar_program(prog);
    forwarders::generate_forwarders(prog);
}

/// Parses, elaborates and fully checks a program.
pub fn load(src: &str, opts: typecheck::CheckOptions) -> Result<Program, Error> {
    let mut p = parser::parse_program(src)?;
    elaborate(&mut p);
    typecheck::check_signature(&p, opts)?;
    typecheck::check_main(&p)?;
    Ok(p)
}
