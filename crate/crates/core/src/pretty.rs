//! Pretty-printer back to the concrete syntax. `parse_program` of the output
//! yields the same AST (spans aside). Generated forwarders are not printed.

use std::fmt::Write;

use crate::ast::{ChanDecl, Proc, ProcDef, Program, Term};
use crate::security::{SecPair, SecTerm};

/// Source form of a security term. Joins parse left-nested, so only a join
/// in right position needs parentheses.
pub fn sec_source(t: &SecTerm) -> String {
    match t {
        SecTerm::Level(l) => format!("#{l}"),
        SecTerm::Var(v) => v.to_string(),
        SecTerm::Join(a, b) => {
            let r = match **b {
                SecTerm::Join(..) => format!("({})", sec_source(b)),
                _ => sec_source(b),
            };
            format!("{} |_| {}", sec_source(a), r)
        }
    }
}

fn pair_source(p: &SecPair) -> String {
    if p.conf == p.integ {
        format!("[{}]", sec_source(&p.conf))
    } else {
        format!("[{}, {}]", sec_source(&p.conf), sec_source(&p.integ))
    }
}

fn list_source(ts: &[SecTerm]) -> String {
    ts.iter().map(sec_source).collect::<Vec<_>>().join(", ")
}

fn decl_source(d: &ChanDecl) -> String {
    format!("{} : {}{}", d.name, d.ty, pair_source(&d.sec))
}

fn indent(out: &mut String, n: usize) {
    for _ in 0..n {
        out.push_str("    ");
    }
}

pub fn print_term(t: &Term, depth: usize, out: &mut String) {
    indent(out, depth);
    match &**t {
        Proc::Select { chan, label, cont } => {
            writeln!(out, "select {chan} {label};").unwrap();
            print_term(cont, depth, out);
        }
        Proc::Send { payload, chan, cont } => {
            writeln!(out, "send {payload} to {chan};").unwrap();
            print_term(cont, depth, out);
        }
        Proc::Recv { binder, chan, cont } => {
            writeln!(out, "{binder} = receive {chan};").unwrap();
            print_term(cont, depth, out);
        }
        Proc::Wait { chan, cont } => {
            writeln!(out, "wait {chan};").unwrap();
            print_term(cont, depth, out);
        }
        Proc::Close { chan } => {
            writeln!(out, "close {chan}").unwrap();
        }
        Proc::Forward { offered, used } => {
            writeln!(out, "forward {used} to {offered}").unwrap();
        }
        Proc::FwdCall { ty, offered, used } => {
            // Never produced by the parser. Printed as a plain forward with
            // the type in a comment, so the output still parses.
            writeln!(out, "forward {used} to {offered} (* via {ty} *)").unwrap();
        }
        Proc::Spawn {
            binder,
            proc,
            subst,
            args,
            cont,
        } => {
            writeln!(
                out,
                "instantiate {binder} = {proc}[{}]({});",
                list_source(subst),
                args.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(", ")
            )
            .unwrap();
            print_term(cont, depth, out);
        }
        Proc::TailCall {
            chan,
            proc,
            subst,
            args,
        } => {
            writeln!(
                out,
                "instantiate {chan} = {proc}[{}]({})",
                list_source(subst),
                args.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(", ")
            )
            .unwrap();
        }
        Proc::Case { chan, branches } => {
            writeln!(out, "case {chan} {{").unwrap();
            for (i, (l, b)) in branches.iter().enumerate() {
                indent(out, depth + 1);
                if i > 0 {
                    out.push_str("| ");
                }
                writeln!(out, "{l} ->").unwrap();
                print_term(b, depth + 2, out);
            }
            indent(out, depth);
            out.push_str("}\n");
        }
    }
}

pub fn print_procdef(d: &ProcDef, out: &mut String) {
    writeln!(
        out,
        "    proc {}[{}] provide ({}) using ({}) at {} =",
        d.name,
        d.theory,
        decl_source(&d.offered),
        d.params.iter().map(decl_source).collect::<Vec<_>>().join(", "),
        pair_source(&d.at)
    )
    .unwrap();
    print_term(&d.body, 2, out);
}

pub fn print_program(p: &Program) -> String {
    let mut out = String::from("secrecy\n");
    for d in p.level_decls() {
        let anc = d
            .ancestors
            .iter()
            .map(|a| format!("#{a}"))
            .collect::<Vec<_>>()
            .join(", ");
        writeln!(out, "    #{} < ({anc})", d.name).unwrap();
    }
    out.push_str("end\n\n");
    for th in &p.theories {
        writeln!(
            out,
            "theory {}[{}]",
            th.name,
            th.vars.iter().map(|v| v.as_str()).collect::<Vec<_>>().join(", ")
        )
        .unwrap();
        for r in &th.relations {
            writeln!(out, "    {} <= {};", sec_source(&r.lhs), sec_source(&r.rhs)).unwrap();
        }
        out.push_str("end\n\n");
    }
    out.push_str("stype signature\n");
    for (n, t) in &p.signature.typedefs {
        writeln!(out, "    stype {n} = {t}").unwrap();
    }
    out.push_str("end\n\nproc signature\n");
    for (i, d) in p.signature.procdefs.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        print_procdef(d, &mut out);
    }
    out.push_str("end\n\n");
    writeln!(out, "exec {}[{}]", p.main.proc, list_source(&p.main.subst)).unwrap();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;

    #[test]
    fn nested_join_round_trips() {
        let t = SecTerm::Join(
            Box::new(SecTerm::var("a")),
            Box::new(SecTerm::Join(
                Box::new(SecTerm::var("b")),
                Box::new(SecTerm::level("t")),
            )),
        );
        assert_eq!(sec_source(&t), "a |_| (b |_| #t)");
        let src = format!(
            "secrecy #t < () end theory T[a, b] {} <= a; end stype signature end proc signature end exec M[]",
            sec_source(&t)
        );
        let p = parse_program(&src).unwrap();
        assert_eq!(p.theories[0].relations[0].lhs, t);
        assert_eq!(parse_program(&print_program(&p)).unwrap(), p);
    }
}
