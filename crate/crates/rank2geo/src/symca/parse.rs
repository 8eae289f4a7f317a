//! Recursive-descent parser for rational expressions in named coordinates.
//!
//! Accepts integer literals, coordinate names, `+ - * / ^` with integer
//! exponents, unary minus, and parentheses. `^` binds tighter than `*`,
//! which binds tighter than `+`.

use thiserror::Error;

use super::ratexpr::RationalExpr;


#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("unexpected character '{ch}' at position {pos}")]
    UnexpectedChar { ch: char, pos: usize },
    #[error("unknown coordinate '{name}' at position {pos}")]
    UnknownCoordinate { name: String, pos: usize },
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("expected {expected} at position {pos}, found '{found}'")]
    Expected { expected: &'static str, pos: usize, found: String },
    #[error("exponent out of range at position {pos}")]
    ExponentRange { pos: usize },
    #[error("division by zero in expression at position {pos}")]
    DivisionByZero { pos: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Int(num::BigInt),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn tokenize(input: &str) -> Result<Vec<(Token, usize)>, ParseError> {
    let mut tokens = Vec::new();
    let chars: Vec<char> = input.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let pos = i;
        match c {
            ' ' | '\t' | '\n' | '\r' => {
                i += 1;
            }
            '+' => {
                tokens.push((Token::Plus, pos));
                i += 1;
            }
            '-' => {
                tokens.push((Token::Minus, pos));
                i += 1;
            }
            '*' => {
                tokens.push((Token::Star, pos));
                i += 1;
            }
            '/' => {
                tokens.push((Token::Slash, pos));
                i += 1;
            }
            '^' => {
                tokens.push((Token::Caret, pos));
                i += 1;
            }
            '(' => {
                tokens.push((Token::LParen, pos));
                i += 1;
            }
            ')' => {
                tokens.push((Token::RParen, pos));
                i += 1;
            }
            '0'..='9' => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                tokens.push((Token::Int(s.parse().expect("digits parse")), pos));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_alphanumeric() || chars[i] == '_')
                {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                tokens.push((Token::Ident(s), pos));
            }
            _ => return Err(ParseError::UnexpectedChar { ch: c, pos }),
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    names: &'a [String],
    nvars: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&(Token, usize)> {
        self.tokens.get(self.pos)
    }

    fn advance(&mut self) -> Option<(Token, usize)> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<RationalExpr, ParseError> {
        let mut acc = self.term()?;
        while let Some((tok, _)) = self.peek() {
            match tok {
                Token::Plus => {
                    self.advance();
                    acc = acc.add(&self.term()?);
                }
                Token::Minus => {
                    self.advance();
                    acc = acc.sub(&self.term()?);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<RationalExpr, ParseError> {
        let mut acc = self.factor()?;
        while let Some((tok, pos)) = self.peek() {
            let pos = *pos;
            match tok {
                Token::Star => {
                    self.advance();
                    acc = acc.mul(&self.factor()?);
                }
                Token::Slash => {
                    self.advance();
                    let rhs = self.factor()?;
                    acc = acc
                        .div(&rhs)
                        .map_err(|_| ParseError::DivisionByZero { pos })?;
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<RationalExpr, ParseError> {
        match self.peek() {
            Some((Token::Minus, _)) => {
                self.advance();
                Ok(self.factor()?.neg())
            }
            Some((Token::Plus, _)) => {
                self.advance();
                self.factor()
            }
            _ => {
                let base = self.atom()?;
                if let Some((Token::Caret, _)) = self.peek() {
                    self.advance();
                    let (e, pos) = self.exponent()?;
                    base.pow(e).map_err(|_| ParseError::DivisionByZero { pos })
                } else {
                    Ok(base)
                }
            }
        }
    }

    fn exponent(&mut self) -> Result<(i32, usize), ParseError> {
        let mut sign = 1i64;
        let mut parens = false;
        if let Some((Token::LParen, _)) = self.peek() {
            self.advance();
            parens = true;
        }
        if let Some((Token::Minus, _)) = self.peek() {
            self.advance();
            sign = -1;
        }
        match self.advance() {
            Some((Token::Int(n), pos)) => {
                use num::ToPrimitive;
                let v = n
                    .to_i64()
                    .and_then(|v| i32::try_from(sign * v).ok())
                    .ok_or(ParseError::ExponentRange { pos })?;
                if parens {
                    match self.advance() {
                        Some((Token::RParen, _)) => {}
                        Some((t, p)) => {
                            return Err(ParseError::Expected {
                                expected: "')'",
                                pos: p,
                                found: format!("{t:?}"),
                            })
                        }
                        None => return Err(ParseError::UnexpectedEnd),
                    }
                }
                Ok((v, pos))
            }
            Some((t, p)) => Err(ParseError::Expected {
                expected: "integer exponent",
                pos: p,
                found: format!("{t:?}"),
            }),
            None => Err(ParseError::UnexpectedEnd),
        }
    }

    fn atom(&mut self) -> Result<RationalExpr, ParseError> {
        match self.advance() {
            Some((Token::Int(n), _)) => {
                Ok(RationalExpr::constant(self.nvars, num::BigRational::from(n)))
            }
            Some((Token::Ident(name), pos)) => {
                match self.names.iter().position(|c| *c == name) {
                    Some(idx) => Ok(RationalExpr::var(self.nvars, idx)),
                    None => Err(ParseError::UnknownCoordinate { name, pos }),
                }
            }
            Some((Token::LParen, _)) => {
                let inner = self.expr()?;
                match self.advance() {
                    Some((Token::RParen, _)) => Ok(inner),
                    Some((t, p)) => Err(ParseError::Expected {
                        expected: "')'",
                        pos: p,
                        found: format!("{t:?}"),
                    }),
                    None => Err(ParseError::UnexpectedEnd),
                }
            }
            Some((t, p)) => Err(ParseError::Expected {
                expected: "number, coordinate, or '('",
                pos: p,
                found: format!("{t:?}"),
            }),
            None => Err(ParseError::UnexpectedEnd),
        }
    }
}

/// Parse `input` as a rational expression in the given coordinate names.
pub fn parse_expr(input: &str, names: &[String]) -> Result<RationalExpr, ParseError> {
    let tokens = tokenize(input)?;
    let mut p = Parser { tokens, pos: 0, names, nvars: names.len() };
    let expr = p.expr()?;
    if let Some((t, pos)) = p.peek() {
        return Err(ParseError::Expected {
            expected: "end of expression",
            pos: *pos,
            found: format!("{t:?}"),
        });
    }
    Ok(expr)
}
