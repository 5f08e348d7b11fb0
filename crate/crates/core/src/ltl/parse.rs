//! Recursive-descent parser for the LTL spec grammar.
//!
//! Grammar (precedence `!`/`X`/`G`/`F` > `U` > `&` > `|` > `->`):
//!
//! ```text
//! formula := or ('->' formula)?          // right-associative
//! or      := and ('|' and)*
//! and     := until ('&' until)*
//! until   := unary ('U' unary)*          // left-associative
//! unary   := ('!'|'X'|'G'|'F') unary | '(' formula ')' | atom
//! atom    := [A-Za-z_][A-Za-z0-9_]*      // except the operator letters
//! ```

use super::{LtlError, LtlFormula};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Atom(String),
    Not,
    Next,
    Globally,
    Finally,
    Until,
    And,
    Or,
    Implies,
    LParen,
    RParen,
}

struct Lexer<'a> {
    text: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Lexer { text: text.as_bytes(), pos: 0 }
    }

    fn next_token(&mut self) -> Result<Option<(Token, usize)>, LtlError> {
        while self.pos < self.text.len() && self.text[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos >= self.text.len() {
            return Ok(None);
        }
        let start = self.pos;
        let c = self.text[self.pos];
        let token = match c {
            b'!' => {
                self.pos += 1;
                Token::Not
            }
            b'&' => {
                self.pos += 1;
                Token::And
            }
            b'|' => {
                self.pos += 1;
                Token::Or
            }
            b'(' => {
                self.pos += 1;
                Token::LParen
            }
            b')' => {
                self.pos += 1;
                Token::RParen
            }
            b'-' => {
                if self.text.get(self.pos + 1) == Some(&b'>') {
                    self.pos += 2;
                    Token::Implies
                } else {
                    return Err(LtlError::Syntax {
                        pos: start,
                        msg: "expected `->`".into(),
                    });
                }
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut end = self.pos;
                while end < self.text.len()
                    && (self.text[end].is_ascii_alphanumeric() || self.text[end] == b'_')
                {
                    end += 1;
                }
                let word = std::str::from_utf8(&self.text[self.pos..end]).unwrap();
                self.pos = end;
                match word {
                    "X" => Token::Next,
                    "G" => Token::Globally,
                    "F" => Token::Finally,
                    "U" => Token::Until,
                    _ => Token::Atom(word.to_string()),
                }
            }
            other => {
                return Err(LtlError::Syntax {
                    pos: start,
                    msg: format!("unexpected character `{}`", other as char),
                });
            }
        };
        Ok(Some((token, start)))
    }
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    cursor: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.cursor).map(|(t, _)| t)
    }

    fn pos(&self) -> usize {
        self.tokens
            .get(self.cursor)
            .map(|&(_, p)| p)
            .unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.cursor).map(|(t, _)| t.clone());
        if t.is_some() {
            self.cursor += 1;
        }
        t
    }

    fn expect(&mut self, token: Token, what: &str) -> Result<(), LtlError> {
        if self.peek() == Some(&token) {
            self.cursor += 1;
            Ok(())
        } else {
            Err(LtlError::Syntax {
                pos: self.pos(),
                msg: format!("expected {what}"),
            })
        }
    }

    fn formula(&mut self) -> Result<LtlFormula, LtlError> {
        let lhs = self.or()?;
        if self.peek() == Some(&Token::Implies) {
            self.cursor += 1;
            let rhs = self.formula()?;
            Ok(LtlFormula::implies(lhs, rhs))
        } else {
            Ok(lhs)
        }
    }

    fn or(&mut self) -> Result<LtlFormula, LtlError> {
        let mut lhs = self.and()?;
        while self.peek() == Some(&Token::Or) {
            self.cursor += 1;
            let rhs = self.and()?;
            lhs = LtlFormula::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<LtlFormula, LtlError> {
        let mut lhs = self.until()?;
        while self.peek() == Some(&Token::And) {
            self.cursor += 1;
            let rhs = self.until()?;
            lhs = LtlFormula::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn until(&mut self) -> Result<LtlFormula, LtlError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(&Token::Until) {
            self.cursor += 1;
            let rhs = self.unary()?;
            lhs = LtlFormula::until(lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<LtlFormula, LtlError> {
        match self.peek() {
            Some(Token::Not) => {
                self.cursor += 1;
                Ok(LtlFormula::negate(self.unary()?))
            }
            Some(Token::Next) => {
                self.cursor += 1;
                Ok(LtlFormula::next(self.unary()?))
            }
            Some(Token::Globally) => {
                self.cursor += 1;
                Ok(LtlFormula::globally(self.unary()?))
            }
            Some(Token::Finally) => {
                self.cursor += 1;
                Ok(LtlFormula::Finally(Box::new(self.unary()?)))
            }
            Some(Token::LParen) => {
                self.cursor += 1;
                let inner = self.formula()?;
                self.expect(Token::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Token::Atom(_)) => {
                let Some(Token::Atom(name)) = self.bump() else {
                    unreachable!()
                };
                Ok(LtlFormula::Atom(name))
            }
            _ => Err(LtlError::Syntax {
                pos: self.pos(),
                msg: "expected a formula".into(),
            }),
        }
    }
}

/// Parses one formula. Unknown atom names are accepted here and resolved at
/// evaluation time.
pub fn parse(text: &str) -> Result<LtlFormula, LtlError> {
    let mut lexer = Lexer::new(text);
    let mut tokens = Vec::new();
    while let Some(t) = lexer.next_token()? {
        tokens.push(t);
    }
    let mut parser = Parser { tokens, cursor: 0, end: text.len() };
    let formula = parser.formula()?;
    if parser.cursor != parser.tokens.len() {
        return Err(LtlError::Syntax {
            pos: parser.pos(),
            msg: "trailing input".into(),
        });
    }
    Ok(formula)
}

/// Parses a spec file: one formula per line, `#` comments, blank lines
/// ignored. Returns `(line_number, formula)` pairs.
pub fn parse_spec_file(text: &str) -> Result<Vec<(usize, LtlFormula)>, LtlError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.push((idx + 1, parse(line)?));
    }
    Ok(out)
}
