//! Recursive-descent parser for `.tr` policy files.
//!
//! ```text
//! policy  := 'tr-policy' name '(' [Var {',' Var}] ')' NEWLINE {rule NEWLINE}
//! rule    := cond '->' action
//! cond    := conj {'or' conj}
//! conj    := unary {'and' unary}
//! unary   := 'not' unary | 'true' | '(' cond ')' | atom
//! action  := stage {'then' stage}
//! stage   := call {'par' call}          (call may be a parenthesised action)
//! ```
//!
//! `∧ ∨ ¬ ⊗ ∥ →` are accepted as aliases of `and or not then par ->`, and
//! `||` as an alias of `par`. `#` starts a line comment.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use super::ast::{ActionExpr, CondExpr, Term, TrPolicy, TrRule};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {kind}")]
pub struct ParseError {
    pub line: u32,
    pub column: u32,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax(String),
    DuplicateParam(String),
    UnboundActionVariable(String),
    NoRules,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::Syntax(m) => f.write_str(m),
            ParseErrorKind::DuplicateParam(p) => write!(f, "duplicate parameter `{p}`"),
            ParseErrorKind::UnboundActionVariable(v) => {
                write!(
                    f,
                    "action variable `{v}` is bound neither by the condition nor by a parameter"
                )
            }
            ParseErrorKind::NoRules => f.write_str("policy has no rules"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Header,
    Ident(String),
    Str(String),
    Num(String),
    LParen,
    RParen,
    Comma,
    Arrow,
    And,
    Or,
    Not,
    Then,
    Par,
    True,
    Newline,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Header => "`tr-policy`".into(),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Str(s) => format!("string '{s}'"),
            Tok::Num(n) => format!("number {n}"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Arrow => "`->`".into(),
            Tok::And => "`and`".into(),
            Tok::Or => "`or`".into(),
            Tok::Not => "`not`".into(),
            Tok::Then => "`then`".into(),
            Tok::Par => "`par`".into(),
            Tok::True => "`true`".into(),
            Tok::Newline => "end of line".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: u32,
    column: u32,
}

fn syntax(line: u32, column: u32, msg: impl Into<String>) -> ParseError {
    ParseError {
        line,
        column,
        kind: ParseErrorKind::Syntax(msg.into()),
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn lex(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);

    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        macro_rules! push {
            ($tok:expr, $width:expr) => {{
                let width: usize = $width;
                out.push(Spanned {
                    tok: $tok,
                    line: tl,
                    column: tc,
                });
                i += width;
                col += width as u32;
            }};
        }
        match c {
            '\n' => {
                out.push(Spanned {
                    tok: Tok::Newline,
                    line,
                    column: col,
                });
                i += 1;
                line += 1;
                col = 1;
            }
            ' ' | '\t' | '\r' => {
                i += 1;
                col += 1;
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                    col += 1;
                }
            }
            '(' => push!(Tok::LParen, 1),
            ')' => push!(Tok::RParen, 1),
            ',' => push!(Tok::Comma, 1),
            '∧' => push!(Tok::And, 1),
            '∨' => push!(Tok::Or, 1),
            '¬' => push!(Tok::Not, 1),
            '⊗' => push!(Tok::Then, 1),
            '∥' => push!(Tok::Par, 1),
            '→' => push!(Tok::Arrow, 1),
            '-' if chars.get(i + 1) == Some(&'>') => push!(Tok::Arrow, 2),
            '|' if chars.get(i + 1) == Some(&'|') => push!(Tok::Par, 2),
            '\'' | '"' => {
                let quote = c;
                let mut j = i + 1;
                let mut value = String::new();
                loop {
                    match chars.get(j) {
                        None | Some('\n') => return Err(syntax(tl, tc, "unterminated string")),
                        Some('\\') => {
                            match chars.get(j + 1) {
                                Some(e @ ('\\' | '\'' | '"')) => value.push(*e),
                                _ => return Err(syntax(line, col + (j - i) as u32, "bad escape")),
                            }
                            j += 2;
                        }
                        Some(&q) if q == quote => {
                            j += 1;
                            break;
                        }
                        Some(&other) => {
                            value.push(other);
                            j += 1;
                        }
                    }
                }
                push!(Tok::Str(value), j - i);
            }
            c if c.is_ascii_digit() => {
                let mut j = i;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                let text: String = chars[i..j].iter().collect();
                push!(Tok::Num(text), j - i);
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i;
                while j < chars.len() && is_ident_char(chars[j]) {
                    j += 1;
                }
                let word: String = chars[i..j].iter().collect();
                if word == "tr" && chars.get(j) == Some(&'-') {
                    let rest: String = chars[j + 1..].iter().take(6).collect();
                    let after = chars.get(j + 7).copied();
                    if rest == "policy" && !after.is_some_and(is_ident_char) {
                        push!(Tok::Header, j + 7 - i);
                        continue;
                    }
                }
                // dotted path: Ident('.' Ident)*
                while chars.get(j) == Some(&'.')
                    && chars.get(j + 1).is_some_and(|c| c.is_ascii_alphabetic() || *c == '_')
                {
                    j += 1;
                    while j < chars.len() && is_ident_char(chars[j]) {
                        j += 1;
                    }
                }
                let word: String = chars[i..j].iter().collect();
                let tok = match word.as_str() {
                    "and" => Tok::And,
                    "or" => Tok::Or,
                    "not" => Tok::Not,
                    "then" => Tok::Then,
                    "par" => Tok::Par,
                    "true" => Tok::True,
                    _ => Tok::Ident(word),
                };
                push!(tok, j - i);
            }
            other => return Err(syntax(line, col, format!("unexpected character `{other}`"))),
        }
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        column: col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

fn starts_lower(s: &str) -> bool {
    s.chars().next().is_some_and(|c| c.is_ascii_lowercase())
}

fn starts_upper(s: &str) -> bool {
    s.chars().next().is_some_and(|c| c.is_ascii_uppercase())
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if &self.peek().tok == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<Spanned, ParseError> {
        let t = self.peek().clone();
        if t.tok == tok {
            Ok(self.bump())
        } else {
            Err(self.unexpected(&format!("expected {}", tok.describe())))
        }
    }

    fn unexpected(&self, what: &str) -> ParseError {
        let t = self.peek();
        syntax(t.line, t.column, format!("{what}, found {}", t.tok.describe()))
    }

    fn skip_newlines(&mut self) {
        while self.eat(&Tok::Newline) {}
    }

    fn lower_ident(&mut self, role: &str) -> Result<String, ParseError> {
        match &self.peek().tok {
            Tok::Ident(s) if starts_lower(s) && !s.contains('.') => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.unexpected(&format!("expected {role} (lowercase identifier)"))),
        }
    }

    fn policy(&mut self) -> Result<TrPolicy, ParseError> {
        self.skip_newlines();
        self.expect(Tok::Header)?;
        let name = self.lower_ident("policy name")?;
        self.expect(Tok::LParen)?;
        let mut params: Vec<String> = Vec::new();
        if !self.eat(&Tok::RParen) {
            loop {
                let t = self.peek().clone();
                match &t.tok {
                    Tok::Ident(p) if starts_upper(p) && !p.contains('.') => {
                        if params.contains(p) {
                            return Err(ParseError {
                                line: t.line,
                                column: t.column,
                                kind: ParseErrorKind::DuplicateParam(p.clone()),
                            });
                        }
                        params.push(p.clone());
                        self.bump();
                    }
                    _ => return Err(self.unexpected("expected parameter (capitalised identifier)")),
                }
                if self.eat(&Tok::Comma) {
                    continue;
                }
                self.expect(Tok::RParen)?;
                break;
            }
        }
        if !matches!(self.peek().tok, Tok::Newline | Tok::Eof) {
            return Err(self.unexpected("expected end of line after policy header"));
        }

        let mut rules = Vec::new();
        loop {
            self.skip_newlines();
            if self.peek().tok == Tok::Eof {
                break;
            }
            let start = self.peek().clone();
            let condition = self.cond()?;
            self.expect(Tok::Arrow)?;
            let action = self.action()?;
            if !matches!(self.peek().tok, Tok::Newline | Tok::Eof) {
                return Err(self.unexpected("expected end of rule"));
            }
            let bound: BTreeSet<String> = condition
                .variables()
                .into_iter()
                .chain(params.iter().cloned())
                .collect();
            if let Some(v) = action.variables().into_iter().find(|v| !bound.contains(v)) {
                return Err(ParseError {
                    line: start.line,
                    column: start.column,
                    kind: ParseErrorKind::UnboundActionVariable(v),
                });
            }
            rules.push(TrRule {
                condition,
                action,
                line: Some(start.line),
            });
        }
        if rules.is_empty() {
            let t = self.peek();
            return Err(ParseError {
                line: t.line,
                column: t.column,
                kind: ParseErrorKind::NoRules,
            });
        }
        Ok(TrPolicy { name, params, rules })
    }

    fn cond(&mut self) -> Result<CondExpr, ParseError> {
        let mut lhs = self.conj()?;
        while self.eat(&Tok::Or) {
            let rhs = self.conj()?;
            lhs = CondExpr::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn conj(&mut self) -> Result<CondExpr, ParseError> {
        let mut lhs = self.unary()?;
        while self.eat(&Tok::And) {
            let rhs = self.unary()?;
            lhs = CondExpr::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<CondExpr, ParseError> {
        if self.eat(&Tok::Not) {
            return Ok(CondExpr::not(self.unary()?));
        }
        if self.eat(&Tok::True) {
            return Ok(CondExpr::True);
        }
        if self.eat(&Tok::LParen) {
            let inner = self.cond()?;
            self.expect(Tok::RParen)?;
            return Ok(inner);
        }
        let predicate = self.lower_ident("condition")?;
        let args = self.arg_list()?;
        Ok(CondExpr::Atom { predicate, args })
    }

    fn action(&mut self) -> Result<ActionExpr, ParseError> {
        let mut lhs = self.stage()?;
        while self.eat(&Tok::Then) {
            let rhs = self.stage()?;
            lhs = ActionExpr::seq(lhs, rhs);
        }
        Ok(lhs)
    }

    fn stage(&mut self) -> Result<ActionExpr, ParseError> {
        let mut lhs = self.call()?;
        while self.eat(&Tok::Par) {
            let rhs = self.call()?;
            lhs = ActionExpr::par(lhs, rhs);
        }
        Ok(lhs)
    }

    fn call(&mut self) -> Result<ActionExpr, ParseError> {
        if self.eat(&Tok::LParen) {
            let inner = self.action()?;
            self.expect(Tok::RParen)?;
            return Ok(inner);
        }
        let name = self.lower_ident("action")?;
        let args = self.arg_list()?;
        Ok(ActionExpr::Call { name, args })
    }

    fn arg_list(&mut self) -> Result<Vec<Term>, ParseError> {
        let mut args = Vec::new();
        if !self.eat(&Tok::LParen) {
            return Ok(args);
        }
        if self.eat(&Tok::RParen) {
            return Ok(args);
        }
        loop {
            args.push(self.term()?);
            if self.eat(&Tok::Comma) {
                continue;
            }
            self.expect(Tok::RParen)?;
            return Ok(args);
        }
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        let t = self.peek().clone();
        let term = match t.tok {
            Tok::Str(s) | Tok::Num(s) => Term::Const(s),
            Tok::Ident(s) if starts_upper(&s) => match s.split_once('.') {
                Some((var, field)) => Term::path(var, field),
                None => Term::Var(s),
            },
            Tok::Ident(s) => Term::Const(s),
            _ => return Err(self.unexpected("expected argument")),
        };
        self.bump();
        Ok(term)
    }
}

/// Parses one TR policy from DSL source.
pub fn parse_tr_policy(src: &str) -> Result<TrPolicy, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0 };
    let policy = p.policy()?;
    p.skip_newlines();
    if p.peek().tok != Tok::Eof {
        return Err(p.unexpected("expected end of input"));
    }
    Ok(policy)
}
