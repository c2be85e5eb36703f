//! Recursive-descent parser for the infix dynamics syntax.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('**' exponent)?
//! exponent := INT ('**' exponent)? | '(' exponent ')'
//! atom   := NUMBER | VAR | FUNC '(' expr ')' | '(' expr ')'
//! ```
//!
//! A unary minus applied directly to a numeric literal (not followed by `**`)
//! folds into a negative constant, so printed negative constants parse back
//! to the same node.

use std::sync::Arc;

use thiserror::Error;

use super::{Expr, Function};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown identifier `{name}` at position {position}")]
    UnknownIdentifier { name: String, position: usize },
    #[error("variable `{name}` at position {position} is out of range (limit {limit})")]
    IndexOutOfRange {
        name: String,
        position: usize,
        limit: usize,
    },
    #[error("exponent `{text}` at position {position} is not a non-negative integer")]
    NonIntegerExponent { text: String, position: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(String),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    StarStar,
    LParen,
    RParen,
    End,
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => out.push((Tok::Plus, start)),
            b'-' => out.push((Tok::Minus, start)),
            b'/' => out.push((Tok::Slash, start)),
            b'(' => out.push((Tok::LParen, start)),
            b')' => out.push((Tok::RParen, start)),
            b'*' => {
                if bytes.get(i + 1) == Some(&b'*') {
                    out.push((Tok::StarStar, start));
                    i += 1;
                } else {
                    out.push((Tok::Star, start));
                }
            }
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                out.push((Tok::Num(src[start..i].to_string()), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
                continue;
            }
            _ => {
                return Err(ParseError::Syntax {
                    position: start,
                    message: format!("unexpected character `{}`", c as char),
                })
            }
        }
        i += 1;
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    n_vars: usize,
    n_inputs: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let idx = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[idx].0
    }

    fn position(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            position: self.position(),
            message: message.into(),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.syntax(format!("expected {what}"))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::Add(Arc::new(lhs), Arc::new(rhs));
                }
                Tok::Minus => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::Sub(Arc::new(lhs), Arc::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    let rhs = self.unary()?;
                    lhs = Expr::Mul(Arc::new(lhs), Arc::new(rhs));
                }
                Tok::Slash => {
                    self.bump();
                    let rhs = self.unary()?;
                    lhs = Expr::Div(Arc::new(lhs), Arc::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() != Tok::Minus {
            return self.power();
        }
        self.bump();
        if let Tok::Num(_) = self.peek() {
            if *self.peek_at(1) != Tok::StarStar {
                let v = self.number()?;
                return Ok(Expr::Const(-v));
            }
        }
        let inner = self.unary()?;
        Ok(Expr::Neg(Arc::new(inner)))
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if *self.peek() == Tok::StarStar {
            self.bump();
            let exponent = self.exponent()?;
            return Ok(Expr::Pow(Arc::new(base), exponent));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<u32, ParseError> {
        let position = self.position();
        let value = match self.bump() {
            Tok::LParen => {
                let v = self.exponent()?;
                self.expect(Tok::RParen, "`)`")?;
                v
            }
            Tok::Num(text) => {
                if text.contains(['.', 'e', 'E']) {
                    return Err(ParseError::NonIntegerExponent { text, position });
                }
                text.parse::<u32>()
                    .map_err(|_| ParseError::NonIntegerExponent { text, position })?
            }
            Tok::Minus => {
                return Err(ParseError::NonIntegerExponent {
                    text: "-".into(),
                    position,
                })
            }
            _ => {
                return Err(ParseError::NonIntegerExponent {
                    text: "<expression>".into(),
                    position,
                })
            }
        };
        if *self.peek() == Tok::StarStar {
            self.bump();
            let rest = self.exponent()?;
            return value.checked_pow(rest).ok_or(ParseError::NonIntegerExponent {
                text: format!("{value}**{rest}"),
                position,
            });
        }
        Ok(value)
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        let position = self.position();
        match self.bump() {
            Tok::Num(text) => text.parse::<f64>().map_err(|_| ParseError::Syntax {
                position,
                message: format!("malformed number `{text}`"),
            }),
            _ => Err(ParseError::Syntax {
                position,
                message: "expected a number".into(),
            }),
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let position = self.position();
        match self.peek().clone() {
            Tok::Num(_) => Ok(Expr::Const(self.number()?)),
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if let Some(f) = Function::from_name(&name) {
                    self.expect(Tok::LParen, "`(` after function name")?;
                    let arg = self.expr()?;
                    self.expect(Tok::RParen, "`)`")?;
                    return Ok(Expr::Call(f, Arc::new(arg)));
                }
                self.variable(&name, position)
            }
            Tok::End => self.syntax("unexpected end of input"),
            other => self.syntax(format!("unexpected token {other:?}")),
        }
    }

    fn variable(&self, name: &str, position: usize) -> Result<Expr, ParseError> {
        let unknown = || ParseError::UnknownIdentifier {
            name: name.to_string(),
            position,
        };
        let (prefix, digits) = name.split_at(1);
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(unknown());
        }
        let index: usize = digits.parse().map_err(|_| unknown())?;
        let (limit, expr) = match prefix {
            "x" => (self.n_vars, Expr::State(index)),
            "u" => (self.n_inputs, Expr::Input(index)),
            _ => return Err(unknown()),
        };
        if index >= limit {
            return Err(ParseError::IndexOutOfRange {
                name: name.to_string(),
                position,
                limit,
            });
        }
        Ok(expr)
    }
}

impl Expr {
    /// Parses infix text over `x0..x{n_vars-1}` and `u0..u{n_inputs-1}`.
    pub fn parse(source: &str, n_vars: usize, n_inputs: usize) -> Result<Expr, ParseError> {
        let mut p = Parser {
            toks: tokenize(source)?,
            pos: 0,
            n_vars,
            n_inputs,
        };
        let e = p.expr()?;
        if *p.peek() != Tok::End {
            return p.syntax("trailing input");
        }
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(e: Expr) -> Arc<Expr> {
        Arc::new(e)
    }

    #[test]
    fn listing_dynamics() {
        let e = Expr::parse("x1 - x0**3", 2, 0).unwrap();
        assert_eq!(e, Expr::Sub(a(Expr::State(1)), a(Expr::Pow(a(Expr::State(0)), 3))));
        assert_eq!(Expr::parse("-x0", 2, 0).unwrap(), Expr::Neg(a(Expr::State(0))));
    }

    #[test]
    fn pendulum_component() {
        let e = Expr::parse("u1 + (0.73575*sin(x0) - 0.1*x1) / (0.0375)", 2, 2).unwrap();
        let expected = Expr::Add(
            a(Expr::Input(1)),
            a(Expr::Div(
                a(Expr::Sub(
                    a(Expr::Mul(
                        a(Expr::Const(0.73575)),
                        a(Expr::Call(Function::Sin, a(Expr::State(0)))),
                    )),
                    a(Expr::Mul(a(Expr::Const(0.1)), a(Expr::State(1)))),
                )),
                a(Expr::Const(0.0375)),
            )),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn precedence_and_associativity() {
        // ** binds tighter than unary minus, which binds tighter than *.
        let e = Expr::parse("-x0**2", 1, 0).unwrap();
        assert_eq!(e, Expr::Neg(a(Expr::Pow(a(Expr::State(0)), 2))));
        let e = Expr::parse("x0 - x1 - x2", 3, 0).unwrap();
        assert!(matches!(e, Expr::Sub(ref l, _) if matches!(**l, Expr::Sub(..))));
        let e = Expr::parse("x0**2**3", 1, 0).unwrap();
        assert_eq!(e, Expr::Pow(a(Expr::State(0)), 8));
        let e = Expr::parse("-2**2", 1, 0).unwrap();
        assert_eq!(e, Expr::Neg(a(Expr::Pow(a(Expr::Const(2.0)), 2))));
        assert_eq!(Expr::parse("-2.5", 1, 0).unwrap(), Expr::Const(-2.5));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            Expr::parse("x0 + ", 1, 0),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(
            Expr::parse("y0", 1, 0),
            Err(ParseError::UnknownIdentifier { .. })
        ));
        assert!(matches!(
            Expr::parse("x2", 2, 0),
            Err(ParseError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            Expr::parse("u0", 2, 0),
            Err(ParseError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            Expr::parse("x0**0.5", 1, 0),
            Err(ParseError::NonIntegerExponent { .. })
        ));
        assert!(matches!(
            Expr::parse("x0**-1", 1, 0),
            Err(ParseError::NonIntegerExponent { .. })
        ));
        assert!(matches!(
            Expr::parse("x0 $ 1", 1, 0),
            Err(ParseError::Syntax { position: 3, .. })
        ));
    }
}
