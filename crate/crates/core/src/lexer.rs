//! Tokenizer for the concrete syntax. Comments are `(* ... *)` and nest.

use crate::ast::Span;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Level(String),
    Keyword(&'static str),
    Sym(&'static str),
    Eof,
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Level(s) => write!(f, "level `#{s}`"),
            Tok::Keyword(k) => write!(f, "`{k}`"),
            Tok::Sym(s) => write!(f, "`{s}`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

pub const KEYWORDS: &[&str] = &[
    "secrecy",
    "theory",
    "stype",
    "proc",
    "signature",
    "provide",
    "using",
    "at",
    "end",
    "exec",
    "select",
    "case",
    "send",
    "to",
    "receive",
    "wait",
    "close",
    "forward",
    "instantiate",
    "unit",
];

// Longest first so that `|_|` wins over `|` and `-o` / `->` over `-`.
const SYMBOLS: &[&str] = &[
    "|_|", "->", "-o", "<=", "+", "&", "{", "}", "|", "*", "<", "(", ")", "[", "]", ",", ";", ":", "=", "1",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LexError {
    pub span: Span,
    pub msg: String,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '\''
}

pub fn lex(src: &str) -> Result<Vec<(Tok, Span)>, LexError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let advance = |i: &mut usize, line: &mut u32, col: &mut u32, n: usize| {
        for _ in 0..n {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        let span = Span { line, col };
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, 1);
            continue;
        }
        if c == '(' && chars.get(i + 1) == Some(&'*') {
            let mut depth = 0usize;
            loop {
                if i >= chars.len() {
                    return Err(LexError {
                        span,
                        msg: "unterminated comment".into(),
                    });
                }
                if chars[i] == '(' && chars.get(i + 1) == Some(&'*') {
                    depth += 1;
                    advance(&mut i, &mut line, &mut col, 2);
                } else if chars[i] == '*' && chars.get(i + 1) == Some(&')') {
                    depth -= 1;
                    advance(&mut i, &mut line, &mut col, 2);
                    if depth == 0 {
                        break;
                    }
                } else {
                    advance(&mut i, &mut line, &mut col, 1);
                }
            }
            continue;
        }
        if c == '#' {
            let start = i + 1;
            let mut j = start;
            while j < chars.len() && is_ident_char(chars[j]) {
                j += 1;
            }
            if j == start || !is_ident_start(chars[start]) {
                return Err(LexError {
                    span,
                    msg: "expected a level name after `#`".into(),
                });
            }
            let name: String = chars[start..j].iter().collect();
            let n = j - i;
            advance(&mut i, &mut line, &mut col, n);
            out.push((Tok::Level(name), span));
            continue;
        }
        if is_ident_start(c) {
            let mut j = i;
            while j < chars.len() && is_ident_char(chars[j]) {
                j += 1;
            }
            let word: String = chars[i..j].iter().collect();
            let n = j - i;
            advance(&mut i, &mut line, &mut col, n);
            match KEYWORDS.iter().find(|k| **k == word) {
                Some(k) => out.push((Tok::Keyword(k), span)),
                None => out.push((Tok::Ident(word), span)),
            }
            continue;
        }
        let mut matched = None;
        for s in SYMBOLS {
            let n = s.chars().count();
            if chars.len() >= i + n && chars[i..i + n].iter().copied().eq(s.chars()) {
                // `-o` must not swallow the head of an identifier such as `-ok`.
                if *s == "-o" && chars.get(i + 2).is_some_and(|c| is_ident_char(*c)) {
                    continue;
                }
                matched = Some(*s);
                break;
            }
        }
        match matched {
            Some(s) => {
                advance(&mut i, &mut line, &mut col, s.chars().count());
                out.push((Tok::Sym(s), span));
            }
            None => {
                return Err(LexError {
                    span,
                    msg: format!("unexpected character `{c}`"),
                })
            }
        }
    }
    out.push((Tok::Eof, Span { line, col }));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Tok> {
        lex(s).unwrap().into_iter().map(|(t, _)| t).collect()
    }

    #[test]
    fn symbols_and_comments() {
        assert_eq!(
            toks("a |_| #b (* x (* nested *) y *) <= c -o d -> e"),
            vec![
                Tok::Ident("a".into()),
                Tok::Sym("|_|"),
                Tok::Level("b".into()),
                Tok::Sym("<="),
                Tok::Ident("c".into()),
                Tok::Sym("-o"),
                Tok::Ident("d".into()),
                Tok::Sym("->"),
                Tok::Ident("e".into()),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn positions() {
        let t = lex("secrecy\n  #bank").unwrap();
        assert_eq!((t[1].1.line, t[1].1.col), (2, 3));
    }

    #[test]
    fn errors() {
        assert!(lex("(* open").is_err());
        assert!(lex("a $ b").is_err());
        assert!(lex("# x").is_err());
    }
}
