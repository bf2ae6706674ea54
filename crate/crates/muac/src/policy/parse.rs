//! Recursive descent parser for the MuAC concrete syntax.
//!
//! ```text
//! policy   := { rule }
//! rule     := head [ ":-" body ] [ "with" preds ] "."
//! head     := "Gives" "(" "Me" "," resource "," var ")"
//! body     := giveatom { "," giveatom }
//! giveatom := "Gives" "(" userterm "," resource "," userterm ")"
//! preds    := predatom { "," predatom }
//! predatom := PREDNAME "(" userterm { "," userterm } ")"
//! userterm := "Me" | var
//! ```
//!
//! `%` starts a line comment. Variables are lowercase identifiers with
//! optional trailing primes; resources are lowercase identifiers without
//! primes; predicate names are capitalized.

use serde::Serialize;
use thiserror::Error;

use crate::model::{ResourceKind, UserId};

use super::{GiveAtom, Policy, PredAtom, Rule, UserTerm};

#[derive(Debug, Error, PartialEq, Eq, Clone, Serialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum ParseError {
    #[error("{line}:{col}: expected {expected}, found {found}")]
    Syntax { line: usize, col: usize, expected: String, found: String },
    #[error("{line}:{col}: head giver must be Me")]
    HeadNotMe { line: usize, col: usize },
    #[error("{line}:{col}: resource position holds a variable")]
    ResourceVariable { line: usize, col: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),    // lowercase, may contain primes
    CapIdent(String), // capitalized: Gives, Me, predicate names
    LParen,
    RParen,
    Comma,
    ColonDash,
    Dot,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) | Tok::CapIdent(s) => format!("{s:?}"),
            Tok::LParen => "\"(\"".into(),
            Tok::RParen => "\")\"".into(),
            Tok::Comma => "\",\"".into(),
            Tok::ColonDash => "\":-\"".into(),
            Tok::Dot => "\".\"".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src: src.as_bytes(), pos: 0, line: 1, col: 1 }
    }

    fn bump(&mut self) -> Option<u8> {
        let b = *self.src.get(self.pos)?;
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(b)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn next_token(&mut self) -> Result<Spanned, ParseError> {
        loop {
            match self.peek() {
                Some(b) if b.is_ascii_whitespace() => {
                    self.bump();
                }
                Some(b'%') => {
                    while let Some(b) = self.bump() {
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        let (line, col) = (self.line, self.col);
        let spanned = |tok| Spanned { tok, line, col };
        let Some(b) = self.peek() else {
            return Ok(spanned(Tok::Eof));
        };
        match b {
            b'(' => {
                self.bump();
                Ok(spanned(Tok::LParen))
            }
            b')' => {
                self.bump();
                Ok(spanned(Tok::RParen))
            }
            b',' => {
                self.bump();
                Ok(spanned(Tok::Comma))
            }
            b'.' => {
                self.bump();
                Ok(spanned(Tok::Dot))
            }
            b':' => {
                self.bump();
                if self.peek() == Some(b'-') {
                    self.bump();
                    Ok(spanned(Tok::ColonDash))
                } else {
                    Err(ParseError::Syntax {
                        line,
                        col,
                        expected: "\":-\"".into(),
                        found: "\":\"".into(),
                    })
                }
            }
            b'a'..=b'z' | b'A'..=b'Z' => {
                let start = self.pos;
                let cap = b.is_ascii_uppercase();
                while let Some(c) = self.peek() {
                    if c.is_ascii_alphanumeric() || c == b'_' || (!cap && c == b'\'') {
                        self.bump();
                    } else {
                        break;
                    }
                }
                let text = std::str::from_utf8(&self.src[start..self.pos])
                    .expect("ascii identifier")
                    .to_owned();
                Ok(spanned(if cap { Tok::CapIdent(text) } else { Tok::Ident(text) }))
            }
            other => Err(ParseError::Syntax {
                line,
                col,
                expected: "a token".into(),
                found: format!("{:?}", char::from(other)),
            }),
        }
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    current: Spanned,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self, ParseError> {
        let mut lexer = Lexer::new(src);
        let current = lexer.next_token()?;
        Ok(Parser { lexer, current })
    }

    fn advance(&mut self) -> Result<Spanned, ParseError> {
        let next = self.lexer.next_token()?;
        Ok(std::mem::replace(&mut self.current, next))
    }

    fn error(&self, expected: &str) -> ParseError {
        ParseError::Syntax {
            line: self.current.line,
            col: self.current.col,
            expected: expected.into(),
            found: self.current.tok.describe(),
        }
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<(), ParseError> {
        if self.current.tok == tok {
            self.advance()?;
            Ok(())
        } else {
            Err(self.error(expected))
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        match &self.current.tok {
            Tok::Ident(s) | Tok::CapIdent(s) => s == kw,
            _ => false,
        }
    }

    fn resource(&mut self) -> Result<ResourceKind, ParseError> {
        match &self.current.tok {
            Tok::Ident(s) => {
                if s.contains('\'') {
                    return Err(ParseError::ResourceVariable {
                        line: self.current.line,
                        col: self.current.col,
                    });
                }
                let kind = ResourceKind::new(s).map_err(|_| self.error("a resource name"))?;
                self.advance()?;
                Ok(kind)
            }
            _ => Err(self.error("a resource name")),
        }
    }

    fn userterm(&mut self) -> Result<UserTerm, ParseError> {
        match &self.current.tok {
            Tok::CapIdent(s) if s == "Me" => {
                self.advance()?;
                Ok(UserTerm::Me)
            }
            Tok::Ident(s) if s != "with" => {
                let term = UserTerm::Var(s.clone());
                self.advance()?;
                Ok(term)
            }
            _ => Err(self.error("\"Me\" or a variable")),
        }
    }

    fn give_atom(&mut self) -> Result<GiveAtom, ParseError> {
        if !self.at_keyword("Gives") {
            return Err(self.error("\"Gives\""));
        }
        self.advance()?;
        self.expect(Tok::LParen, "\"(\"")?;
        let giver = self.userterm()?;
        self.expect(Tok::Comma, "\",\"")?;
        let resource = self.resource()?;
        self.expect(Tok::Comma, "\",\"")?;
        let receiver = self.userterm()?;
        self.expect(Tok::RParen, "\")\"")?;
        Ok(GiveAtom { giver, resource, receiver })
    }

    fn pred_atom(&mut self) -> Result<PredAtom, ParseError> {
        let predicate = match &self.current.tok {
            Tok::CapIdent(s) if s != "Me" && s != "Gives" => s.clone(),
            _ => return Err(self.error("a predicate name")),
        };
        self.advance()?;
        self.expect(Tok::LParen, "\"(\"")?;
        let mut args = vec![self.userterm()?];
        while self.current.tok == Tok::Comma {
            self.advance()?;
            args.push(self.userterm()?);
        }
        self.expect(Tok::RParen, "\")\"")?;
        Ok(PredAtom { predicate, args })
    }

    fn rule(&mut self) -> Result<Rule, ParseError> {
        if !self.at_keyword("Gives") {
            return Err(self.error("\"Gives\""));
        }
        self.advance()?;
        self.expect(Tok::LParen, "\"(\"")?;
        // Head giver must be Me; head receiver must be a variable.
        if !self.at_keyword("Me") {
            return Err(ParseError::HeadNotMe {
                line: self.current.line,
                col: self.current.col,
            });
        }
        self.advance()?;
        self.expect(Tok::Comma, "\",\"")?;
        let resource = self.resource()?;
        self.expect(Tok::Comma, "\",\"")?;
        let receiver = match self.userterm()? {
            UserTerm::Var(v) => UserTerm::Var(v),
            UserTerm::Me => return Err(self.error("a variable (head receiver cannot be Me)")),
        };
        self.expect(Tok::RParen, "\")\"")?;
        let head = GiveAtom { giver: UserTerm::Me, resource, receiver };

        let mut body = Vec::new();
        if self.current.tok == Tok::ColonDash {
            self.advance()?;
            body.push(self.give_atom()?);
            while self.current.tok == Tok::Comma {
                self.advance()?;
                body.push(self.give_atom()?);
            }
        }
        let mut guards = Vec::new();
        if self.at_keyword("with") {
            self.advance()?;
            guards.push(self.pred_atom()?);
            while self.current.tok == Tok::Comma {
                self.advance()?;
                guards.push(self.pred_atom()?);
            }
        }
        self.expect(Tok::Dot, "\".\"")?;
        Ok(Rule { head, body, guards })
    }

    fn policy(&mut self, owner: UserId) -> Result<Policy, ParseError> {
        let mut rules = Vec::new();
        while self.current.tok != Tok::Eof {
            rules.push(self.rule()?);
        }
        Ok(Policy { owner, rules })
    }
}

/// Parses a policy file for `owner`. Whitespace- and comment-insensitive;
/// rule order is preserved and becomes the rule id.
pub fn parse_policy(text: &str, owner: UserId) -> Result<Policy, ParseError> {
    Parser::new(text)?.policy(owner)
}
