//! The harmonic angle function on the closed upper half-plane, its exact
//! gradient, the sign/indicator factors and the reduced wedge factors, plus
//! gauge-fixed parameterizations of the open configuration spaces for the
//! three graph families.

use crate::exact::Family;
use std::f64::consts::PI;
use thiserror::Error;

const TAU: f64 = 2.0 * PI;

/// A point of the closed upper half-plane. Bulk points have `im > 0`,
/// boundary points `im == 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HPoint {
    pub re: f64,
    pub im: f64,
}

impl HPoint {
    pub fn bulk(re: f64, im: f64) -> Self {
        assert!(im > 0.0, "bulk point needs im > 0");
        HPoint { re, im }
    }

    pub fn boundary(re: f64) -> Self {
        HPoint { re, im: 0.0 }
    }

    pub fn is_boundary(&self) -> bool {
        self.im == 0.0
    }

    pub fn dist(&self, other: &HPoint) -> f64 {
        ((self.re - other.re).powi(2) + (self.im - other.im).powi(2)).sqrt()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("coincident points")]
    CoincidentPoints,
    #[error("equal real parts (sign factor undefined)")]
    EqualRealParts,
}

/// Harmonic angle `phi(u, v) = arg((v - u) / (v - conj(u)))` reduced to
/// `[0, 2*pi)` for bulk `u`.
///
/// For boundary `u` the function is locally constant in `v` and we return
/// the branch value: `0` when `Re(v) < Re(u)` and `2*pi` when
/// `Re(v) > Re(u)` (the limit from the branch cut above `u`).
pub fn angle(u: HPoint, v: HPoint) -> Result<f64, GeometryError> {
    if u.dist(&v) == 0.0 {
        return Err(GeometryError::CoincidentPoints);
    }
    if u.is_boundary() {
        return match v.re.partial_cmp(&u.re) {
            Some(std::cmp::Ordering::Greater) => Ok(TAU),
            Some(std::cmp::Ordering::Less) => Ok(0.0),
            _ => Err(GeometryError::CoincidentPoints),
        };
    }
    let a1 = (v.im - u.im).atan2(v.re - u.re);
    let a2 = (v.im + u.im).atan2(v.re - u.re);
    let mut phi = a1 - a2;
    while phi < 0.0 {
        phi += TAU;
    }
    while phi >= TAU {
        phi -= TAU;
    }
    Ok(phi)
}

/// Partial derivatives of the branch-free local representative of
/// `phi(u, v)` with respect to `(Re u, Im u, Re v, Im v)`.
///
/// For boundary `u` the `v`-partials are identically zero (the angle at a
/// real source is locally constant).
pub fn angle_gradient(u: HPoint, v: HPoint) -> Result<[f64; 4], GeometryError> {
    if u.dist(&v) == 0.0 {
        return Err(GeometryError::CoincidentPoints);
    }
    // phi = atan2(d - b, c - a) - atan2(d + b, c - a) with u = a + ib, v = c + id
    let x = v.re - u.re;
    let y1 = v.im - u.im;
    let y2 = v.im + u.im;
    let r1 = x * x + y1 * y1;
    let r2 = x * x + y2 * y2;
    let d_re_u = y1 / r1 - y2 / r2;
    let d_im_u = -x / r1 - x / r2;
    let d_re_v = -y1 / r1 + y2 / r2;
    let d_im_v = x / r1 - x / r2;
    Ok([d_re_u, d_im_u, d_re_v, d_im_v])
}

/// `[x; y]`: +1 when `Re(x) > Re(y)`, -1 when `Re(x) < Re(y)`.
pub fn sign_bulk(x: HPoint, y: HPoint) -> Result<i32, GeometryError> {
    if x.re == y.re {
        return Err(GeometryError::EqualRealParts);
    }
    Ok(if x.re > y.re { 1 } else { -1 })
}

/// `(x; q)`: 1 when `Re(x) > q`, 0 when `Re(x) < q`.
pub fn indicator_boundary(x: HPoint, q: f64) -> Result<i32, GeometryError> {
    if x.re == q {
        return Err(GeometryError::EqualRealParts);
    }
    Ok(if x.re > q { 1 } else { 0 })
}

/// Wedge with both feet in the bulk, integrated over its tip and normalized
/// by `(2*pi)^2`: `(phi(x,y) - phi(y,x)) / (2*pi) + [x;y] / 2`.
pub fn wedge_factor_bulk(x: HPoint, y: HPoint) -> Result<f64, GeometryError> {
    let s = sign_bulk(x, y)?;
    Ok((angle(x, y)? - angle(y, x)?) / TAU + 0.5 * s as f64)
}

/// Wedge with one foot on the boundary, normalized the same way; the
/// boundary angle `phi(q, x)` takes its branch value in `{0, 2*pi}`.
pub fn wedge_factor_boundary(x: HPoint, q: f64) -> Result<f64, GeometryError> {
    if x.re == q {
        return Err(GeometryError::EqualRealParts);
    }
    let s = sign_bulk(x, HPoint::boundary(q))?;
    Ok((angle(x, HPoint::boundary(q))? - angle(HPoint::boundary(q), x)?) / TAU + 0.5 * s as f64)
}

/// Directed edge between vertex slots of a family graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vertex {
    /// The bulk vertex pinned by the gauge (Gamma: `x = i`) or moving on the
    /// gauge-fixed circle (Upsilon: `x = e^{i theta}`).
    X,
    /// The free bulk vertex of the Gamma wheel.
    Y,
    /// Boundary point (Upsilon: `q = 0`; Lambda: `p = 0`).
    P,
    /// Second boundary point (Lambda: `q = 1`).
    Q,
    /// Wedge tip `z_k`.
    Z(u32),
}

/// Ordered directed edges of one family graph, in the integrand order the
/// weight formulas fix: the wheel/boundary edges first, then the wedge
/// pairs `(z_k -> x, z_k -> y)`.
pub fn edge_list(family: Family, n: u32) -> Vec<(Vertex, Vertex)> {
    let mut edges = Vec::new();
    match family {
        Family::Gamma => {
            edges.push((Vertex::X, Vertex::Y));
            edges.push((Vertex::Y, Vertex::X));
            for k in 0..n {
                edges.push((Vertex::Z(k), Vertex::X));
                edges.push((Vertex::Z(k), Vertex::Y));
            }
        }
        Family::Upsilon => {
            edges.push((Vertex::X, Vertex::P));
            for k in 0..n {
                edges.push((Vertex::Z(k), Vertex::X));
                edges.push((Vertex::Z(k), Vertex::P));
            }
        }
        Family::Lambda => {
            for k in 0..n {
                edges.push((Vertex::Z(k), Vertex::P));
                edges.push((Vertex::Z(k), Vertex::Q));
            }
        }
    }
    edges
}

/// Dimension of the gauge-fixed configuration space (= edge count).
pub fn config_dim(family: Family, n: u32) -> usize {
    match family {
        Family::Gamma => (2 * n + 2) as usize,
        Family::Upsilon => (2 * n + 1) as usize,
        Family::Lambda => (2 * n) as usize,
    }
}

/// A point of the gauge-fixed open configuration space of one family.
///
/// Coordinates: Gamma stores `(Re y, Im y, Re z_1, Im z_1, ...)` with `x`
/// pinned to `i`; Upsilon stores `(theta, Re z_1, Im z_1, ...)` with
/// `x = e^{i theta}`, `q = 0`; Lambda stores the `z_k` pairs with `p = 0`,
/// `q = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeFixedConfig {
    pub family: Family,
    pub n: u32,
    pub coords: Vec<f64>,
}

impl GaugeFixedConfig {
    pub fn new(family: Family, n: u32, coords: Vec<f64>) -> Self {
        assert_eq!(
            coords.len(),
            config_dim(family, n),
            "coordinate dimension must equal the family's edge count"
        );
        let cfg = GaugeFixedConfig { family, n, coords };
        debug_assert!(cfg.points_distinct());
        cfg
    }

    /// Position of a vertex slot under this configuration's gauge.
    pub fn position(&self, v: Vertex) -> HPoint {
        match (self.family, v) {
            (Family::Gamma, Vertex::X) => HPoint { re: 0.0, im: 1.0 },
            (Family::Gamma, Vertex::Y) => HPoint { re: self.coords[0], im: self.coords[1] },
            (Family::Gamma, Vertex::Z(k)) => HPoint {
                re: self.coords[2 + 2 * k as usize],
                im: self.coords[3 + 2 * k as usize],
            },
            (Family::Upsilon, Vertex::X) => {
                let theta = self.coords[0];
                HPoint { re: theta.cos(), im: theta.sin() }
            }
            (Family::Upsilon, Vertex::P) => HPoint::boundary(0.0),
            (Family::Upsilon, Vertex::Z(k)) => HPoint {
                re: self.coords[1 + 2 * k as usize],
                im: self.coords[2 + 2 * k as usize],
            },
            (Family::Lambda, Vertex::P) => HPoint::boundary(0.0),
            (Family::Lambda, Vertex::Q) => HPoint::boundary(1.0),
            (Family::Lambda, Vertex::Z(k)) => HPoint {
                re: self.coords[2 * k as usize],
                im: self.coords[1 + 2 * k as usize],
            },
            _ => unreachable!("vertex {v:?} not part of family {:?}", self.family),
        }
    }

    fn vertices(&self) -> Vec<Vertex> {
        let mut vs = match self.family {
            Family::Gamma => vec![Vertex::X, Vertex::Y],
            Family::Upsilon => vec![Vertex::X, Vertex::P],
            Family::Lambda => vec![Vertex::P, Vertex::Q],
        };
        for k in 0..self.n {
            vs.push(Vertex::Z(k));
        }
        vs
    }

    pub fn points_distinct(&self) -> bool {
        let vs = self.vertices();
        for (i, a) in vs.iter().enumerate() {
            for b in &vs[i + 1..] {
                if self.position(*a).dist(&self.position(*b)) == 0.0 {
                    return false;
                }
            }
        }
        true
    }
}
