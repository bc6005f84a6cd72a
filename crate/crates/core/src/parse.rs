//! Text grammar for series literals.
//!
//! A literal is a sum of terms; a term is an optional sign, an optional
//! rational coefficient, and a product of variable powers written by
//! juxtaposition (an explicit `*` is tolerated). `h` is reserved for the
//! deformation parameter. Exponents are written with `^` and may be
//! negative on invertible variables:
//!
//! ```text
//! 3/2 x1^2 y2 h - x1
//! -t^-2 + 1/4 t p h^2
//! ```

use num::{BigInt, One, Zero};

use crate::error::{Error, Result};
use crate::series::{Mono, Q, ScalarSeries, Validity, Var};
use crate::weyl::WeylElement;

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Plus,
    Minus,
    Star,
    Caret,
    Slash,
    Int(BigInt),
    Ident(String),
    End,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Lexer<'a> {
        Lexer { src: src.as_bytes(), pos: 0 }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Result<Tok> {
        let save = self.pos;
        let t = self.next()?;
        self.pos = save;
        Ok(t)
    }

    fn next(&mut self) -> Result<Tok> {
        self.skip_ws();
        if self.pos >= self.src.len() {
            return Ok(Tok::End);
        }
        let c = self.src[self.pos];
        let at = self.pos;
        match c {
            b'+' => {
                self.pos += 1;
                Ok(Tok::Plus)
            }
            b'-' => {
                self.pos += 1;
                Ok(Tok::Minus)
            }
            b'*' => {
                self.pos += 1;
                Ok(Tok::Star)
            }
            b'^' => {
                self.pos += 1;
                Ok(Tok::Caret)
            }
            b'/' => {
                self.pos += 1;
                Ok(Tok::Slash)
            }
            b'0'..=b'9' => {
                let start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                Ok(Tok::Int(text.parse().unwrap()))
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                Ok(Tok::Ident(
                    std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string(),
                ))
            }
            _ => Err(Error::Parse {
                at,
                message: format!("unexpected character `{}`", c as char),
            }),
        }
    }
}

/// Parse a series literal over the given variable list. `h` denotes the
/// deformation parameter and must not appear among the chart variables.
pub fn parse_series(src: &str, vars: &[Var], cap: u32, validity: Validity) -> Result<ScalarSeries> {
    if vars.iter().any(|v| v.name == "h") {
        return Err(Error::Parse {
            at: 0,
            message: "`h` is reserved and cannot be a chart variable".to_string(),
        });
    }
    let mut lex = Lexer::new(src);
    let mut out = ScalarSeries::zero(vars, cap, validity);
    let mut sign = 1i64;
    let mut expect_term = true;
    loop {
        let tok = lex.peek()?;
        match tok {
            Tok::End => {
                if expect_term && !out.is_zero() {
                    return Err(Error::Parse {
                        at: lex.pos,
                        message: "dangling sign".to_string(),
                    });
                }
                break;
            }
            Tok::Plus => {
                lex.next()?;
                sign = 1;
                expect_term = true;
            }
            Tok::Minus => {
                lex.next()?;
                sign = -sign;
                expect_term = true;
            }
            _ => {
                let (mono, coeff) = parse_term(&mut lex, vars)?;
                let signed = if sign < 0 { -coeff } else { coeff };
                out.insert(mono, signed)?;
                sign = 1;
                expect_term = false;
            }
        }
    }
    Ok(out)
}

fn parse_term(lex: &mut Lexer<'_>, vars: &[Var]) -> Result<(Mono, Q)> {
    let mut coeff = Q::one();
    let mut exps = vec![0i32; vars.len()];
    let mut hpow = 0i32;
    let mut saw_factor = false;
    loop {
        match lex.peek()? {
            Tok::Int(_) => {
                let Tok::Int(n) = lex.next()? else { unreachable!() };
                let mut value = Q::from(n);
                if lex.peek()? == Tok::Slash {
                    lex.next()?;
                    let at = lex.pos;
                    match lex.next()? {
                        Tok::Int(d) => {
                            if d.is_zero() {
                                return Err(Error::Parse {
                                    at,
                                    message: "zero denominator".to_string(),
                                });
                            }
                            value /= Q::from(d);
                        }
                        _ => {
                            return Err(Error::Parse {
                                at,
                                message: "expected denominator".to_string(),
                            })
                        }
                    }
                }
                coeff *= value;
                saw_factor = true;
            }
            Tok::Ident(_) => {
                let Tok::Ident(name) = lex.next()? else { unreachable!() };
                let e = parse_exponent(lex)?;
                if name == "h" {
                    hpow += e;
                } else {
                    let at = lex.pos;
                    let idx = vars
                        .iter()
                        .position(|v| v.name == name)
                        .ok_or(Error::Parse {
                            at,
                            message: format!("unknown variable `{name}`"),
                        })?;
                    exps[idx] += e;
                }
                saw_factor = true;
            }
            Tok::Star => {
                lex.next()?;
            }
            _ => break,
        }
    }
    if !saw_factor {
        return Err(Error::Parse {
            at: lex.pos,
            message: "expected a term".to_string(),
        });
    }
    Ok((Mono { exps, hpow }, coeff))
}

fn parse_exponent(lex: &mut Lexer<'_>) -> Result<i32> {
    if lex.peek()? != Tok::Caret {
        return Ok(1);
    }
    lex.next()?;
    let mut sign = 1i32;
    if lex.peek()? == Tok::Minus {
        lex.next()?;
        sign = -1;
    }
    let at = lex.pos;
    match lex.next()? {
        Tok::Int(n) => {
            let e: i32 = n.to_string().parse().map_err(|_| Error::Parse {
                at,
                message: "exponent too large".to_string(),
            })?;
            Ok(sign * e)
        }
        _ => Err(Error::Parse {
            at,
            message: "expected exponent".to_string(),
        }),
    }
}

/// Parse a Weyl-algebra literal over generators `x1..xn, y1..yn, h`.
///
/// Factors multiply in written order through the normal-ordering product,
/// so `y1 x1` parses to `x1 y1 + h`. The power `h^-1` is admitted.
pub fn parse_weyl(src: &str, n: usize, validity: Validity) -> Result<WeylElement> {
    let mut lex = Lexer::new(src);
    let mut out = WeylElement::zero(n, validity);
    let mut sign = 1i64;
    let mut expect_term = true;
    loop {
        match lex.peek()? {
            Tok::End => {
                if expect_term && !out.is_zero() {
                    return Err(Error::Parse { at: lex.pos, message: "dangling sign".into() });
                }
                break;
            }
            Tok::Plus => {
                lex.next()?;
                sign = 1;
                expect_term = true;
            }
            Tok::Minus => {
                lex.next()?;
                sign = -sign;
                expect_term = true;
            }
            _ => {
                let term = parse_weyl_term(&mut lex, n, validity)?;
                let signed = if sign < 0 { term.neg() } else { term };
                out = out.add(&signed)?;
                sign = 1;
                expect_term = false;
            }
        }
    }
    Ok(out)
}

fn parse_weyl_term(lex: &mut Lexer<'_>, n: usize, validity: Validity) -> Result<WeylElement> {
    let mut acc = WeylElement::one(n, validity);
    let mut saw_factor = false;
    loop {
        match lex.peek()? {
            Tok::Int(_) => {
                let Tok::Int(num) = lex.next()? else { unreachable!() };
                let mut value = Q::from(num);
                if lex.peek()? == Tok::Slash {
                    lex.next()?;
                    let at = lex.pos;
                    match lex.next()? {
                        Tok::Int(d) if !d.is_zero() => value /= Q::from(d),
                        _ => {
                            return Err(Error::Parse { at, message: "expected denominator".into() })
                        }
                    }
                }
                acc = acc.scale(&value);
                saw_factor = true;
            }
            Tok::Ident(_) => {
                let Tok::Ident(name) = lex.next()? else { unreachable!() };
                let at = lex.pos;
                let e = parse_exponent(lex)?;
                let gen = if name == "h" {
                    if e >= 0 {
                        WeylElement::hbar(n, validity).pow(e as u32)?
                    } else {
                        // negative h powers multiply by dividing
                        acc = acc.div_hbar(-e)?;
                        saw_factor = true;
                        continue;
                    }
                } else if let Some(idx) = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok())
                {
                    if idx == 0 || idx > n || e < 0 {
                        return Err(Error::Parse { at, message: format!("bad generator `{name}`") });
                    }
                    WeylElement::x(n, idx - 1, validity).pow(e as u32)?
                } else if let Some(idx) = name.strip_prefix('y').and_then(|s| s.parse::<usize>().ok())
                {
                    if idx == 0 || idx > n || e < 0 {
                        return Err(Error::Parse { at, message: format!("bad generator `{name}`") });
                    }
                    WeylElement::y(n, idx - 1, validity).pow(e as u32)?
                } else {
                    return Err(Error::Parse { at, message: format!("unknown generator `{name}`") });
                };
                acc = acc.mul(&gen)?;
                saw_factor = true;
            }
            Tok::Star => {
                lex.next()?;
            }
            _ => break,
        }
    }
    if !saw_factor {
        return Err(Error::Parse { at: lex.pos, message: "expected a term".into() });
    }
    Ok(acc)
}

/// Number of symplectic pairs mentioned by a set of Weyl literals.
pub fn infer_pairs(sources: &[&str]) -> usize {
    let mut n = 1usize;
    for src in sources {
        for (i, c) in src.char_indices() {
            if (c == 'x' || c == 'y')
                && (i == 0
                    || !src[..i]
                        .chars()
                        .next_back()
                        .map(|p| p.is_ascii_alphanumeric())
                        .unwrap_or(false))
            {
                let digits: String = src[i + 1..]
                    .chars()
                    .take_while(|d| d.is_ascii_digit())
                    .collect();
                if let Ok(idx) = digits.parse::<usize>() {
                    n = n.max(idx);
                }
            }
        }
    }
    n
}

/// Parse a rational constant such as `-3/2` or `7`.
pub fn parse_rational(src: &str) -> Result<Q> {
    let mut lex = Lexer::new(src.trim());
    let mut sign = 1i64;
    loop {
        match lex.peek()? {
            Tok::Minus => {
                lex.next()?;
                sign = -sign;
            }
            Tok::Plus => {
                lex.next()?;
            }
            _ => break,
        }
    }
    let at = lex.pos;
    let Tok::Int(n) = lex.next()? else {
        return Err(Error::Parse { at, message: "expected a rational".to_string() });
    };
    let mut value = Q::from(n);
    if lex.peek()? == Tok::Slash {
        lex.next()?;
        let at = lex.pos;
        let Tok::Int(d) = lex.next()? else {
            return Err(Error::Parse { at, message: "expected denominator".to_string() });
        };
        if d.is_zero() {
            return Err(Error::Parse { at, message: "zero denominator".to_string() });
        }
        value /= Q::from(d);
    }
    if lex.next()? != Tok::End {
        return Err(Error::Parse { at: lex.pos, message: "trailing input".to_string() });
    }
    Ok(if sign < 0 { -value } else { value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{plain_vars, qq};

    #[test]
    fn parses_the_doc_example() {
        let vars = plain_vars(&["x1", "y2"]);
        let f = parse_series("3/2 x1^2 y2 h - x1", &vars, 8, Validity::EXACT).unwrap();
        assert_eq!(f.coeff(&Mono { exps: vec![2, 1], hpow: 1 }), qq(3, 2));
        assert_eq!(f.coeff(&Mono { exps: vec![1, 0], hpow: 0 }), qq(-1, 1));
    }

    #[test]
    fn rejects_unknown_variables_and_bad_syntax() {
        let vars = plain_vars(&["x"]);
        assert!(parse_series("z", &vars, 4, Validity::EXACT).is_err());
        assert!(parse_series("1/0", &vars, 4, Validity::EXACT).is_err());
        assert!(parse_series("x +", &vars, 4, Validity::EXACT).is_err());
    }

    #[test]
    fn explicit_star_and_double_sign() {
        let vars = plain_vars(&["x"]);
        let f = parse_series("2 * x - - x", &vars, 4, Validity::EXACT).unwrap();
        assert_eq!(f.coeff(&Mono { exps: vec![1], hpow: 0 }), qq(3, 1));
    }

    #[test]
    fn rational_constants() {
        assert_eq!(parse_rational("-3/2").unwrap(), qq(-3, 2));
        assert_eq!(parse_rational("7").unwrap(), qq(7, 1));
        assert!(parse_rational("1/0").is_err());
    }
}
