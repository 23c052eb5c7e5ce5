//! Truncated multivariate jets: polynomials in base-offset variables
//! `dx^1..dx^d` and fiber variables `y^1..y^d` with exact rational
//! coefficients, closed under the configured total-degree caps.

use crate::exact::BigRational;
use num::BigInt;
use num_traits::{One, Zero};
use std::collections::BTreeMap;
use std::fmt;

/// Truncation caps: maximum total degree in the base offsets (`kx`) and in
/// the fiber variables (`ky`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Caps {
    pub kx: u32,
    pub ky: u32,
}

impl Caps {
    pub fn new(kx: u32, ky: u32) -> Self {
        Caps { kx, ky }
    }
}

/// Exponent pair: `alpha` over the base offsets, `beta` over the fibers.
pub type Monomial = (Vec<u8>, Vec<u8>);

fn degree(exps: &[u8]) -> u32 {
    exps.iter().map(|&e| e as u32).sum()
}

/// A truncated jet polynomial. Terms beyond the caps are dropped on every
/// operation; storage is canonical (sorted map, no zero coefficients).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JetPolynomial {
    dim: usize,
    caps: Caps,
    terms: BTreeMap<Monomial, BigRational>,
}

impl JetPolynomial {
    pub fn zero(dim: usize, caps: Caps) -> Self {
        JetPolynomial { dim, caps, terms: BTreeMap::new() }
    }

    pub fn constant(dim: usize, caps: Caps, c: BigRational) -> Self {
        let mut p = Self::zero(dim, caps);
        p.add_term(vec![0; dim], vec![0; dim], c);
        p
    }

    pub fn one(dim: usize, caps: Caps) -> Self {
        Self::constant(dim, caps, BigRational::one())
    }

    /// The base offset variable `dx^i`.
    pub fn base_var(dim: usize, caps: Caps, i: usize) -> Self {
        let mut alpha = vec![0u8; dim];
        alpha[i] = 1;
        let mut p = Self::zero(dim, caps);
        p.add_term(alpha, vec![0; dim], BigRational::one());
        p
    }

    /// The fiber variable `y^j`.
    pub fn fiber_var(dim: usize, caps: Caps, j: usize) -> Self {
        let mut beta = vec![0u8; dim];
        beta[j] = 1;
        let mut p = Self::zero(dim, caps);
        p.add_term(vec![0; dim], beta, BigRational::one());
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn caps(&self) -> Caps {
        self.caps
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &BigRational)> {
        self.terms.iter()
    }

    /// Insert `c * dx^alpha y^beta`, accumulating and truncating.
    pub fn add_term(&mut self, alpha: Vec<u8>, beta: Vec<u8>, c: BigRational) {
        assert_eq!(alpha.len(), self.dim);
        assert_eq!(beta.len(), self.dim);
        if c.is_zero() || degree(&alpha) > self.caps.kx || degree(&beta) > self.caps.ky {
            return;
        }
        let entry = self.terms.entry((alpha, beta)).or_insert_with(BigRational::zero);
        *entry += c;
        if entry.is_zero() {
            // re-borrow to remove; key reconstruction is avoided via retain
            self.terms.retain(|_, v| !v.is_zero());
        }
    }

    pub fn coefficient(&self, alpha: &[u8], beta: &[u8]) -> BigRational {
        self.terms
            .get(&(alpha.to_vec(), beta.to_vec()))
            .cloned()
            .unwrap_or_else(BigRational::zero)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.check_compat(other);
        let mut out = self.clone();
        for ((a, b), c) in &other.terms {
            out.add_term(a.clone(), b.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        let mut out = self.clone();
        for (_, c) in out.terms.iter_mut() {
            *c = -c.clone();
        }
        out
    }

    pub fn scale(&self, s: &BigRational) -> Self {
        if s.is_zero() {
            return Self::zero(self.dim, self.caps);
        }
        let mut out = self.clone();
        for (_, c) in out.terms.iter_mut() {
            *c *= s;
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.check_compat(other);
        let mut out = Self::zero(self.dim, self.caps);
        for ((a1, b1), c1) in &self.terms {
            for ((a2, b2), c2) in &other.terms {
                let alpha: Vec<u8> = a1.iter().zip(a2).map(|(x, y)| x + y).collect();
                if degree(&alpha) > self.caps.kx {
                    continue;
                }
                let beta: Vec<u8> = b1.iter().zip(b2).map(|(x, y)| x + y).collect();
                if degree(&beta) > self.caps.ky {
                    continue;
                }
                out.add_term(alpha, beta, c1 * c2);
            }
        }
        out
    }

    /// Partial derivative with respect to the base offset `dx^l`.
    pub fn diff_base(&self, l: usize) -> Self {
        let mut out = Self::zero(self.dim, self.caps);
        for ((a, b), c) in &self.terms {
            if a[l] == 0 {
                continue;
            }
            let mut alpha = a.clone();
            alpha[l] -= 1;
            out.add_term(alpha, b.clone(), c * BigRational::from_integer(BigInt::from(a[l])));
        }
        out
    }

    /// Partial derivative with respect to the fiber variable `y^j`.
    pub fn diff_fiber(&self, j: usize) -> Self {
        let mut out = Self::zero(self.dim, self.caps);
        for ((a, b), c) in &self.terms {
            if b[j] == 0 {
                continue;
            }
            let mut beta = b.clone();
            beta[j] -= 1;
            out.add_term(a.clone(), beta, c * BigRational::from_integer(BigInt::from(b[j])));
        }
        out
    }

    /// Repeated fiber derivative along a sequence of indices.
    pub fn diff_fiber_multi(&self, indices: &[usize]) -> Self {
        let mut out = self.clone();
        for &j in indices {
            out = out.diff_fiber(j);
            if out.is_zero() {
                break;
            }
        }
        out
    }

    /// Drop every term with a nonzero fiber exponent (evaluation at `y = 0`).
    pub fn eval_fiber_zero(&self) -> Self {
        let mut out = Self::zero(self.dim, self.caps);
        for ((a, b), c) in &self.terms {
            if degree(b) == 0 {
                out.add_term(a.clone(), b.clone(), c.clone());
            }
        }
        out
    }

    /// Coefficient view with fiber variables stripped entirely; panics if
    /// any fiber exponent survives.
    pub fn constant_term(&self) -> BigRational {
        self.coefficient(&vec![0; self.dim], &vec![0; self.dim])
    }

    /// Truncate further to the given caps (used when comparing quantities
    /// that are only meaningful below the working caps).
    pub fn truncated(&self, caps: Caps) -> Self {
        let mut out = Self::zero(self.dim, caps);
        for ((a, b), c) in &self.terms {
            out.add_term(a.clone(), b.clone(), c.clone());
        }
        out
    }

    /// True when every coefficient with base degree <= `kx` and fiber degree
    /// <= `ky` vanishes.
    pub fn is_zero_up_to(&self, kx: u32, ky: u32) -> bool {
        self.terms
            .iter()
            .all(|((a, b), _)| degree(a) > kx || degree(b) > ky)
    }

    pub fn pow(&self, e: u32) -> Self {
        let mut out = Self::one(self.dim, self.caps);
        for _ in 0..e {
            out = out.mul(self);
        }
        out
    }

    /// Maximum total fiber degree among stored terms.
    pub fn max_fiber_degree(&self) -> u32 {
        self.terms.keys().map(|(_, b)| degree(b)).max().unwrap_or(0)
    }

    fn check_compat(&self, other: &Self) {
        assert_eq!(self.dim, other.dim, "jet dimension mismatch");
        assert_eq!(self.caps, other.caps, "jet caps mismatch");
    }
}

impl fmt::Display for JetPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for ((a, b), c) in &self.terms {
            let neg = c < &BigRational::zero();
            let mag = if neg { -c.clone() } else { c.clone() };
            if first {
                if neg {
                    write!(f, "-")?;
                }
                first = false;
            } else if neg {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let mut vars = String::new();
            for (i, &e) in a.iter().enumerate() {
                if e > 0 {
                    vars.push_str(&format!("{}x{}{}", if vars.is_empty() { "" } else { "*" }, i + 1, exp_str(e)));
                }
            }
            for (j, &e) in b.iter().enumerate() {
                if e > 0 {
                    vars.push_str(&format!("{}y{}{}", if vars.is_empty() { "" } else { "*" }, j + 1, exp_str(e)));
                }
            }
            if vars.is_empty() {
                write!(f, "{}", crate::exact::render_rational(&mag))?;
            } else if mag.is_one() {
                write!(f, "{vars}")?;
            } else {
                write!(f, "({})*{vars}", crate::exact::render_rational(&mag))?;
            }
        }
        Ok(())
    }
}

fn exp_str(e: u8) -> String {
    if e == 1 {
        String::new()
    } else {
        format!("^{e}")
    }
}

/// A polynomial in the base coordinates only (the inputs `f`, `g` and the
/// entries of the Poisson bivector before pullback).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BasePoly {
    pub terms: BTreeMap<Vec<u8>, BigRational>,
}

impl BasePoly {
    pub fn zero() -> Self {
        BasePoly::default()
    }

    pub fn constant(dim: usize, c: BigRational) -> Self {
        let mut p = BasePoly::zero();
        if !c.is_zero() {
            p.terms.insert(vec![0; dim], c);
        }
        p
    }

    pub fn var(dim: usize, i: usize) -> Self {
        let mut exps = vec![0u8; dim];
        exps[i] = 1;
        let mut p = BasePoly::zero();
        p.terms.insert(exps, BigRational::one());
        p
    }

    pub fn add_term(&mut self, exps: Vec<u8>, c: BigRational) {
        if c.is_zero() {
            return;
        }
        let entry = self.terms.entry(exps).or_insert_with(BigRational::zero);
        *entry += c;
        if entry.is_zero() {
            self.terms.retain(|_, v| !v.is_zero());
        }
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| degree(e)).max().unwrap_or(0)
    }

    /// Substitute jets for the base coordinates (`x^i -> args[i]`).
    pub fn eval_jets(&self, args: &[JetPolynomial], dim: usize, caps: Caps) -> JetPolynomial {
        let mut out = JetPolynomial::zero(dim, caps);
        for (exps, c) in &self.terms {
            let mut term = JetPolynomial::constant(dim, caps, c.clone());
            for (i, &e) in exps.iter().enumerate() {
                for _ in 0..e {
                    term = term.mul(&args[i]);
                }
            }
            out = out.add(&term);
        }
        out
    }
}

/// Multiply two square matrices of jets, truncating as usual.
pub fn matrix_mul(a: &[Vec<JetPolynomial>], b: &[Vec<JetPolynomial>]) -> Vec<Vec<JetPolynomial>> {
    let d = a.len();
    let (dim, caps) = (a[0][0].dim(), a[0][0].caps());
    let mut out = vec![vec![JetPolynomial::zero(dim, caps); d]; d];
    for i in 0..d {
        for j in 0..d {
            for (k, row_b) in b.iter().enumerate() {
                out[i][j] = out[i][j].add(&a[i][k].mul(&row_b[j]));
            }
        }
    }
    out
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SeriesError {
    #[error("leading coefficient matrix is singular")]
    SingularLeadingTerm,
}

/// Invert a square matrix of jets whose constant-term matrix is invertible
/// over the rationals: `N = (sum_p E^p) M0^{-1}` with `E = I - M0^{-1} M`.
pub fn series_matrix_inverse(m: &[Vec<JetPolynomial>]) -> Result<Vec<Vec<JetPolynomial>>, SeriesError> {
    let d = m.len();
    let (dim, caps) = (m[0][0].dim(), m[0][0].caps());
    // constant-term matrix and its exact inverse by Gaussian elimination
    let mut aug: Vec<Vec<BigRational>> = (0..d)
        .map(|i| {
            let mut row: Vec<BigRational> = (0..d).map(|j| m[i][j].constant_term()).collect();
            row.extend((0..d).map(|j| {
                if i == j {
                    BigRational::one()
                } else {
                    BigRational::zero()
                }
            }));
            row
        })
        .collect();
    for col in 0..d {
        let pivot = (col..d).find(|&r| !aug[r][col].is_zero()).ok_or(SeriesError::SingularLeadingTerm)?;
        aug.swap(pivot, col);
        let p = aug[col][col].clone();
        for v in aug[col].iter_mut() {
            *v /= &p;
        }
        for r in 0..d {
            if r != col && !aug[r][col].is_zero() {
                let f = aug[r][col].clone();
                for c in 0..2 * d {
                    let sub = &f * &aug[col][c];
                    aug[r][c] -= sub;
                }
            }
        }
    }
    let n0: Vec<Vec<JetPolynomial>> = (0..d)
        .map(|i| (0..d).map(|j| JetPolynomial::constant(dim, caps, aug[i][j + d].clone())).collect())
        .collect();
    // E = I - N0 M has no constant term, so the Neumann series terminates
    // within kx + ky factors
    let n0m = matrix_mul(&n0, m);
    let mut e = vec![vec![JetPolynomial::zero(dim, caps); d]; d];
    for i in 0..d {
        for (j, entry) in n0m[i].iter().enumerate() {
            let ident = if i == j {
                JetPolynomial::one(dim, caps)
            } else {
                JetPolynomial::zero(dim, caps)
            };
            e[i][j] = ident.sub(entry);
        }
    }
    let mut acc = n0.clone();
    let mut power = n0;
    for _ in 0..(caps.kx + caps.ky) {
        power = matrix_mul(&e, &power);
        if power.iter().all(|row| row.iter().all(|p| p.is_zero())) {
            break;
        }
        for i in 0..d {
            for j in 0..d {
                acc[i][j] = acc[i][j].add(&power[i][j]);
            }
        }
    }
    Ok(acc)
}
