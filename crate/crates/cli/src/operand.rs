//! Tiny parser for polynomial operands given on the command line, e.g.
//! `y1`, `y1*y2`, `2/3*x1^2 + y2`, `x1 - 1/2`. Variables are `x<i>` (base
//! offsets) and `y<i>` (fiber), indices 1-based.

use kweights::exact::BigRational;
use kweights::jet::{BasePoly, Caps, JetPolynomial};
use num::BigInt;

#[derive(Debug)]
pub struct OperandError(pub String);

impl std::fmt::Display for OperandError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "bad operand: {}", self.0)
    }
}

struct Term {
    coeff: BigRational,
    alpha: Vec<u8>,
    beta: Vec<u8>,
}

fn parse_terms(input: &str, dim: usize) -> Result<Vec<Term>, OperandError> {
    let s: String = input.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return Err(OperandError("empty expression".into()));
    }
    let bytes = s.as_bytes();
    let mut terms = Vec::new();
    let mut pos = 0usize;
    let mut sign = 1i64;
    // leading sign
    if bytes[pos] == b'+' || bytes[pos] == b'-' {
        sign = if bytes[pos] == b'-' { -1 } else { 1 };
        pos += 1;
    }
    loop {
        let (term, next) = parse_term(&s, pos, dim, sign)?;
        terms.push(term);
        pos = next;
        if pos == s.len() {
            return Ok(terms);
        }
        sign = match bytes[pos] {
            b'+' => 1,
            b'-' => -1,
            c => return Err(OperandError(format!("unexpected {:?} in {input:?}", c as char))),
        };
        pos += 1;
    }
}

fn parse_term(s: &str, mut pos: usize, dim: usize, sign: i64) -> Result<(Term, usize), OperandError> {
    let bytes = s.as_bytes();
    let mut coeff = BigRational::from_integer(BigInt::from(sign));
    let mut alpha = vec![0u8; dim];
    let mut beta = vec![0u8; dim];
    loop {
        match bytes.get(pos) {
            Some(b'0'..=b'9') => {
                let (num, next) = scan_digits(s, pos);
                pos = next;
                let mut val = BigRational::from_integer(num);
                if bytes.get(pos) == Some(&b'/') {
                    let (den, next) = scan_digits(s, pos + 1);
                    if next == pos + 1 {
                        return Err(OperandError(format!("missing denominator in {s:?}")));
                    }
                    if den == BigInt::from(0) {
                        return Err(OperandError("zero denominator".into()));
                    }
                    val /= BigRational::from_integer(den);
                    pos = next;
                }
                coeff *= val;
            }
            Some(&c @ (b'x' | b'y')) => {
                let (idx, next) = scan_digits(s, pos + 1);
                if next == pos + 1 {
                    return Err(OperandError(format!("variable without index in {s:?}")));
                }
                let idx: usize = idx.to_string().parse().map_err(|_| OperandError("index overflow".into()))?;
                if idx == 0 || idx > dim {
                    return Err(OperandError(format!(
                        "variable index {idx} out of range 1..={dim}"
                    )));
                }
                pos = next;
                let mut exp = 1u8;
                if bytes.get(pos) == Some(&b'^') {
                    let (e, next) = scan_digits(s, pos + 1);
                    if next == pos + 1 {
                        return Err(OperandError(format!("missing exponent in {s:?}")));
                    }
                    exp = e.to_string().parse().map_err(|_| OperandError("exponent overflow".into()))?;
                    pos = next;
                }
                if c == b'x' {
                    alpha[idx - 1] += exp;
                } else {
                    beta[idx - 1] += exp;
                }
            }
            other => {
                return Err(OperandError(format!(
                    "expected a factor, found {:?} in {s:?}",
                    other.map(|&b| b as char)
                )))
            }
        }
        if bytes.get(pos) == Some(&b'*') {
            pos += 1;
            continue;
        }
        break;
    }
    Ok((Term { coeff, alpha, beta }, pos))
}

fn scan_digits(s: &str, start: usize) -> (BigInt, usize) {
    let bytes = s.as_bytes();
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return (BigInt::from(0), start);
    }
    (s[start..end].parse().expect("digits"), end)
}

/// Parse an operand as a jet (both `x` and `y` variables allowed).
pub fn parse_jet(input: &str, dim: usize, caps: Caps) -> Result<JetPolynomial, OperandError> {
    let mut p = JetPolynomial::zero(dim, caps);
    for t in parse_terms(input, dim)? {
        p.add_term(t.alpha, t.beta, t.coeff);
    }
    Ok(p)
}

/// Parse an operand as a base polynomial (`x` variables only).
pub fn parse_base(input: &str, dim: usize) -> Result<BasePoly, OperandError> {
    let mut p = BasePoly::zero();
    for t in parse_terms(input, dim)? {
        if t.beta.iter().any(|&e| e != 0) {
            return Err(OperandError(format!(
                "fiber variable not allowed in a base polynomial: {input:?}"
            )));
        }
        p.add_term(t.alpha, t.coeff);
    }
    Ok(p)
}
