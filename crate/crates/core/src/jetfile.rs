//! On-disk fixture format for jet data: a JSON document with fields
//! `dimension`, `caps`, `phi` (per-component term lists), optional `pi`
//! (strictly-upper antisymmetric entries of a base bivector) and optional
//! `split` (the cotangent block size `m`).
//!
//! Coefficients are exact rationals written as `"p/q"` strings; numeric
//! literals (in particular floats) are rejected at parse time. Writing is
//! canonical, so parse -> write -> parse is bit-exact.

use crate::exact::{render_rational, BigRational};
use crate::jet::{BasePoly, Caps, JetPolynomial};
use crate::series::{CotangentSplit, ExpMapJets, SeriesOpError};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum JetFileError {
    #[error("malformed jet file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("coefficient {0:?} is not an exact rational (write it as \"p/q\")")]
    BadCoefficient(String),
    #[error("inconsistent jet file: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    InvalidMap(#[from] SeriesOpError),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFixture {
    dimension: usize,
    caps: RawCaps,
    phi: Vec<Vec<RawTerm>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pi: Option<Vec<RawPiEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCaps {
    kx: u32,
    ky: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTerm {
    alpha: Vec<u8>,
    beta: Vec<u8>,
    coeff: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPiEntry {
    i: usize,
    j: usize,
    terms: Vec<RawBaseTerm>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBaseTerm {
    alpha: Vec<u8>,
    coeff: String,
}

/// A parsed fixture: the map, an optional base bivector, an optional
/// cotangent split.
#[derive(Debug, Clone, PartialEq)]
pub struct JetFixture {
    pub dimension: usize,
    pub caps: Caps,
    pub phi: ExpMapJets,
    pub pi: Option<Vec<Vec<BasePoly>>>,
    pub split: Option<CotangentSplit>,
}

fn parse_coeff(s: &str) -> Result<BigRational, JetFileError> {
    use num::BigInt;
    use num_traits::Zero;
    let bad = || JetFileError::BadCoefficient(s.to_string());
    let t = s.trim();
    let (num, den) = match t.split_once('/') {
        Some((n, d)) => (n, d),
        None => (t, "1"),
    };
    let num: BigInt = num.parse().map_err(|_| bad())?;
    let den: BigInt = den.parse().map_err(|_| bad())?;
    if den.is_zero() {
        return Err(bad());
    }
    Ok(BigRational::new(num, den))
}

pub fn parse(text: &str) -> Result<JetFixture, JetFileError> {
    let raw: RawFixture = serde_json::from_str(text)?;
    let d = raw.dimension;
    if d == 0 {
        return Err(JetFileError::Inconsistent("dimension must be positive".into()));
    }
    let caps = Caps::new(raw.caps.kx, raw.caps.ky);
    if raw.phi.len() != d {
        return Err(JetFileError::Inconsistent(format!(
            "expected {d} map components, found {}",
            raw.phi.len()
        )));
    }
    let mut comps = Vec::with_capacity(d);
    for terms in &raw.phi {
        let mut p = JetPolynomial::zero(d, caps);
        for t in terms {
            if t.alpha.len() != d || t.beta.len() != d {
                return Err(JetFileError::Inconsistent(
                    "multi-index length does not match dimension".into(),
                ));
            }
            p.add_term(t.alpha.clone(), t.beta.clone(), parse_coeff(&t.coeff)?);
        }
        comps.push(p);
    }
    let phi = ExpMapJets::new(comps)?;
    let pi = match &raw.pi {
        None => None,
        Some(entries) => {
            let mut mat = vec![vec![BasePoly::zero(); d]; d];
            for e in entries {
                if !(e.i < e.j && e.j < d) {
                    return Err(JetFileError::Inconsistent(format!(
                        "bivector entry ({}, {}) is not strictly upper-triangular",
                        e.i, e.j
                    )));
                }
                let mut p = BasePoly::zero();
                for t in &e.terms {
                    if t.alpha.len() != d {
                        return Err(JetFileError::Inconsistent(
                            "bivector multi-index length does not match dimension".into(),
                        ));
                    }
                    p.add_term(t.alpha.clone(), parse_coeff(&t.coeff)?);
                }
                let mut neg = BasePoly::zero();
                for (a, c) in &p.terms {
                    neg.add_term(a.clone(), -c.clone());
                }
                mat[e.j][e.i] = neg;
                mat[e.i][e.j] = p;
            }
            Some(mat)
        }
    };
    let split = match raw.split {
        None => None,
        Some(m) => {
            if 2 * m != d {
                return Err(JetFileError::Inconsistent(format!(
                    "split {m} requires dimension {} but file has {d}",
                    2 * m
                )));
            }
            Some(CotangentSplit { m })
        }
    };
    Ok(JetFixture { dimension: d, caps, phi, pi, split })
}

/// Canonical serialization: sorted terms, reduced `p/q` coefficients.
pub fn to_text(fx: &JetFixture) -> String {
    let phi = fx
        .phi
        .components()
        .iter()
        .map(|p| {
            p.terms()
                .map(|((a, b), c)| RawTerm {
                    alpha: a.clone(),
                    beta: b.clone(),
                    coeff: render_rational(c),
                })
                .collect()
        })
        .collect();
    let pi = fx.pi.as_ref().map(|mat| {
        let d = fx.dimension;
        let mut out = Vec::new();
        for i in 0..d {
            for j in (i + 1)..d {
                if mat[i][j].terms.is_empty() {
                    continue;
                }
                out.push(RawPiEntry {
                    i,
                    j,
                    terms: mat[i][j]
                        .terms
                        .iter()
                        .map(|(a, c)| RawBaseTerm {
                            alpha: a.clone(),
                            coeff: render_rational(c),
                        })
                        .collect(),
                });
            }
        }
        out
    });
    let raw = RawFixture {
        dimension: fx.dimension,
        caps: RawCaps { kx: fx.caps.kx, ky: fx.caps.ky },
        phi,
        pi,
        split: fx.split.map(|s| s.m),
    };
    let mut s = serde_json::to_string_pretty(&raw).expect("fixture serialization cannot fail");
    s.push('\n');
    s
}
