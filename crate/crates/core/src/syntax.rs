//! Tokenizer and token cursor shared by the rule and predicate languages.

use std::fmt;

use thiserror::Error;

/// Maximum nesting depth accepted by either parser.
pub const MAX_DEPTH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Number(f64),
    Sym(&'static str),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Number(n) => write!(f, "number `{n}`"),
            Tok::Sym(s) => write!(f, "`{s}`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{pos}: expected {}, found {found}", expected_list(.expected))]
pub struct SyntaxError {
    pub pos: Pos,
    pub expected: Vec<String>,
    pub found: String,
}

fn expected_list(expected: &[String]) -> String {
    match expected {
        [] => "something else".to_string(),
        [one] => one.clone(),
        many => format!("one of {}", many.join(", ")),
    }
}

// longest match first
const SYMBOLS: &[&str] = &[
    "<=>", ":=", "&&", "||", "=>", "<=", ">=", "==", "!=", "<", ">", "!", "(", ")", ",", ":", ";", ".",
];

pub fn tokenize(src: &str) -> Result<Vec<Token>, SyntaxError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            col += (i - start) as u32;
            out.push(Token { tok: Tok::Ident(word), pos });
            continue;
        }
        let signed = (c == '-' || c == '+') && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit());
        if c.is_ascii_digit() || signed {
            let start = i;
            if signed {
                i += 1;
            }
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if chars.get(i) == Some(&'.') && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let text: String = chars[start..i].iter().collect();
            col += (i - start) as u32;
            let value: f64 = text.parse().map_err(|_| SyntaxError {
                pos,
                expected: vec!["number".into()],
                found: format!("`{text}`"),
            })?;
            if !value.is_finite() {
                return Err(SyntaxError {
                    pos,
                    expected: vec!["finite number".into()],
                    found: format!("`{text}`"),
                });
            }
            out.push(Token { tok: Tok::Number(value), pos });
            continue;
        }
        let rest = &chars[i..];
        match SYMBOLS
            .iter()
            .find(|s| s.chars().count() <= rest.len() && s.chars().zip(rest).all(|(a, b)| a == *b))
        {
            Some(sym) => {
                let n = sym.chars().count();
                i += n;
                col += n as u32;
                out.push(Token { tok: Tok::Sym(sym), pos });
            }
            None => {
                return Err(SyntaxError {
                    pos,
                    expected: vec!["a token".into()],
                    found: format!("`{c}`"),
                })
            }
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: Pos { line, col },
    });
    Ok(out)
}

/// Cursor over a token vector with a recursion-depth guard.
pub struct Cursor {
    toks: Vec<Token>,
    idx: usize,
    depth: usize,
}

impl Cursor {
    pub fn new(src: &str) -> Result<Self, SyntaxError> {
        Ok(Cursor {
            toks: tokenize(src)?,
            idx: 0,
            depth: 0,
        })
    }

    pub fn peek(&self) -> &Token {
        &self.toks[self.idx]
    }

    pub fn peek_at(&self, ahead: usize) -> &Tok {
        let i = (self.idx + ahead).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    pub fn pos(&self) -> Pos {
        self.peek().pos
    }

    pub fn at_eof(&self) -> bool {
        self.peek().tok == Tok::Eof
    }

    pub fn bump(&mut self) -> Token {
        let t = self.toks[self.idx].clone();
        if self.idx + 1 < self.toks.len() {
            self.idx += 1;
        }
        t
    }

    pub fn is_sym(&self, sym: &str) -> bool {
        matches!(&self.peek().tok, Tok::Sym(s) if *s == sym)
    }

    pub fn is_word(&self, word: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == word)
    }

    pub fn eat_sym(&mut self, sym: &str) -> bool {
        if self.is_sym(sym) {
            self.bump();
            true
        } else {
            false
        }
    }

    pub fn error(&self, expected: &[&str]) -> SyntaxError {
        SyntaxError {
            pos: self.pos(),
            expected: expected.iter().map(|e| e.to_string()).collect(),
            found: self.peek().tok.to_string(),
        }
    }

    pub fn expect_sym(&mut self, sym: &'static str) -> Result<Pos, SyntaxError> {
        if self.is_sym(sym) {
            Ok(self.bump().pos)
        } else {
            Err(self.error(&[&format!("`{sym}`")]))
        }
    }

    pub fn expect_word(&mut self, word: &str) -> Result<Pos, SyntaxError> {
        if self.is_word(word) {
            Ok(self.bump().pos)
        } else {
            Err(self.error(&[&format!("`{word}`")]))
        }
    }

    /// Identifier that is not one of `reserved`.
    pub fn expect_ident(&mut self, what: &str, reserved: &[&str]) -> Result<(String, Pos), SyntaxError> {
        match &self.peek().tok {
            Tok::Ident(s) if !reserved.contains(&s.as_str()) => {
                let t = self.bump();
                match t.tok {
                    Tok::Ident(s) => Ok((s, t.pos)),
                    _ => unreachable!(),
                }
            }
            _ => Err(self.error(&[what])),
        }
    }

    pub fn enter(&mut self) -> Result<(), SyntaxError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(SyntaxError {
                pos: self.pos(),
                expected: vec![format!("nesting depth at most {MAX_DEPTH}")],
                found: "deeper nesting".into(),
            });
        }
        Ok(())
    }

    pub fn leave(&mut self) {
        self.depth -= 1;
    }
}

/// Removes `#` line comments and trailing blank lines.
pub fn strip_hash_comments(src: &str) -> String {
    let mut out = String::new();
    for line in src.lines() {
        let code = line.split('#').next().unwrap_or("").trim_end();
        if !code.trim().is_empty() {
            out.push_str(code);
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(src: &str) -> Vec<Tok> {
        tokenize(src).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn symbols_use_longest_match() {
        assert_eq!(
            toks("a <=> b <= c < d => e := f"),
            vec![
                Tok::Ident("a".into()),
                Tok::Sym("<=>"),
                Tok::Ident("b".into()),
                Tok::Sym("<="),
                Tok::Ident("c".into()),
                Tok::Sym("<"),
                Tok::Ident("d".into()),
                Tok::Sym("=>"),
                Tok::Ident("e".into()),
                Tok::Sym(":="),
                Tok::Ident("f".into()),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn numbers_and_dots() {
        assert_eq!(
            toks("L . -0.5 +2 3.x"),
            vec![
                Tok::Ident("L".into()),
                Tok::Sym("."),
                Tok::Number(-0.5),
                Tok::Number(2.0),
                Tok::Number(3.0),
                Tok::Sym("."),
                Tok::Ident("x".into()),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn comments_and_positions() {
        let t = tokenize("# header\n  foo # trailing\nbar").unwrap();
        assert_eq!(t[0].pos, Pos { line: 2, col: 3 });
        assert_eq!(t[1].pos, Pos { line: 3, col: 1 });
    }

    #[test]
    fn bad_character() {
        let e = tokenize("a $ b").unwrap_err();
        assert_eq!(e.pos, Pos { line: 1, col: 3 });
    }

    #[test]
    fn strip_comments() {
        assert_eq!(strip_hash_comments("# c\nrule a: x;  # t\n\n"), "rule a: x;\n");
    }
}
