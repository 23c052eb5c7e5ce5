//! Independent numerical evaluation of the three weight families:
//! Gauss-Legendre quadrature for the reduced boundary-family integral and
//! seeded, chunked Monte Carlo over the gauge-fixed configuration spaces.
//!
//! Estimates are reproducible: the same `(seed, samples, chunks)` yields a
//! bit-identical mean regardless of thread count, because every chunk owns
//! an independent sub-stream and the reduction is an ordered fold.

use crate::exact::{self, Family, WeightQuery};
use crate::propagator::{angle, angle_gradient, edge_list, sign_bulk, GaugeFixedConfig, HPoint, Vertex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::PI;

const TAU: f64 = 2.0 * PI;

/// Minimum pairwise distance below which a sampled configuration is
/// rejected and redrawn (measure-zero coincidence guard).
const COINCIDENCE_EPS: f64 = 1e-9;

/// Orientation calibration per family, fixed once against the known exact
/// values w_Gamma_1 = 1/24, w_Upsilon_2 = 1/12, w_Lambda_1 = 1/2 and
/// asserted by the calibration tests.
const SIGN_GAMMA: f64 = 1.0;
const SIGN_UPSILON: f64 = 1.0;
const SIGN_LAMBDA: f64 = 1.0;

fn family_sign(family: Family) -> f64 {
    match family {
        Family::Gamma => SIGN_GAMMA,
        Family::Upsilon => SIGN_UPSILON,
        Family::Lambda => SIGN_LAMBDA,
    }
}

/// A chunked Monte Carlo estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: u64,
    pub seed: u64,
    pub query: WeightQuery,
    /// Rejected-and-redrawn degenerate configurations.
    pub degenerate: u64,
}

impl McEstimate {
    pub fn z_score(&self, exact: f64) -> f64 {
        if self.std_error == 0.0 {
            if self.mean == exact {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - exact) / self.std_error
        }
    }
}

// ---------------------------------------------------------------------------
// Sampling

/// Heavy-tailed polar map from the open unit square onto the upper
/// half-plane: `theta = pi u`, `r = t / (1 - t)`. Returns the point and the
/// Jacobian of the map with respect to the plane measure,
/// `pi r / (1 - t)^2`.
pub fn sample_halfplane(rng: &mut impl Rng) -> (HPoint, f64) {
    loop {
        let u: f64 = rng.gen_range(0.0..1.0);
        let t: f64 = rng.gen_range(0.0..1.0);
        if t >= 1.0 || t <= 0.0 || u <= 0.0 || u >= 1.0 {
            continue;
        }
        let r = t / (1.0 - t);
        let theta = PI * u;
        let p = HPoint { re: r * theta.cos(), im: r * theta.sin() };
        if p.im <= 0.0 || r == 0.0 {
            continue;
        }
        let jac = PI * r / ((1.0 - t) * (1.0 - t));
        return (p, jac);
    }
}

fn subseed(seed: u64, chunk: u64) -> u64 {
    // splitmix64 step keyed by the chunk index
    let mut z = seed ^ (chunk.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct ChunkStats {
    sum: f64,
    count: u64,
    degenerate: u64,
}

/// Run `samples` evaluations split over `chunks` independent sub-streams and
/// assemble a batch-means estimate. `eval` draws one configuration from the
/// chunk RNG and returns its integrand value, or `None` for a degenerate
/// draw (which is counted and redrawn).
fn run_chunked(
    query: WeightQuery,
    samples: u64,
    seed: u64,
    chunks: u64,
    eval: impl Fn(&mut ChaCha8Rng) -> Option<f64> + Sync,
) -> McEstimate {
    assert!(samples >= 1 && chunks >= 1);
    let chunks = chunks.min(samples);
    let per = samples / chunks;
    let extra = samples % chunks;
    let stats: Vec<ChunkStats> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, c));
            let n = per + u64::from(c < extra);
            let mut sum = 0.0;
            let mut degenerate = 0u64;
            for _ in 0..n {
                loop {
                    match eval(&mut rng) {
                        Some(v) => {
                            sum += v;
                            break;
                        }
                        None => degenerate += 1,
                    }
                }
            }
            ChunkStats { sum, count: n, degenerate }
        })
        .collect();
    let total: u64 = stats.iter().map(|s| s.count).sum();
    let mut sum = 0.0;
    for s in &stats {
        sum += s.sum;
    }
    let mean = sum / total as f64;
    // batch means over chunk averages
    let std_error = if chunks >= 2 {
        let means: Vec<f64> = stats.iter().map(|s| s.sum / s.count as f64).collect();
        let m = means.iter().sum::<f64>() / chunks as f64;
        let var = means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (chunks as f64 - 1.0);
        (var / chunks as f64).sqrt()
    } else {
        0.0
    };
    McEstimate {
        mean,
        std_error,
        samples: total,
        seed,
        query,
        degenerate: stats.iter().map(|s| s.degenerate).sum(),
    }
}

// ---------------------------------------------------------------------------
// Gauss-Legendre quadrature

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`,
/// by Newton iteration on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut rule = Vec::with_capacity(n);
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            dp = n as f64 * (x * p - p0) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.push((x, w));
        if n - 1 - i != i {
            rule.push((-x, w));
        }
    }
    rule.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    rule
}

fn gl_on_interval(points: usize, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    gauss_legendre(points).into_iter().map(move |(x, w)| (mid + half * x, half * w))
}

/// Reduced quadrature path for `w_Upsilon_n`: the one-dimensional integral
/// over `C_{1,1}` parameterized by `theta in (0, pi)` with `x = e^{i theta}`
/// and `q = 0`, split at `theta = pi/2` where the indicator and the
/// boundary-angle branch jump.
pub fn reduced_upsilon_quad(n: u32, points: usize) -> f64 {
    assert!(points >= 2);
    let per_half = points.div_ceil(2);
    let q = HPoint::boundary(0.0);
    let integrand = |theta: f64| -> f64 {
        let x = HPoint::bulk(theta.cos(), theta.sin());
        let ind = if x.re > 0.0 { 1.0 } else { 0.0 };
        let g = angle(x, q).unwrap() - angle(q, x).unwrap() - PI + TAU * ind;
        // d phi(x, q) / d theta via the chain rule through x(theta)
        let grad = angle_gradient(x, q).unwrap();
        let dphi = grad[0] * (-theta.sin()) + grad[1] * theta.cos();
        g.powi(n as i32) * dphi
    };
    let mut acc = 0.0;
    for (t, w) in gl_on_interval(per_half, 0.0, PI / 2.0).chain(gl_on_interval(per_half, PI / 2.0, PI)) {
        acc += w * integrand(t);
    }
    SIGN_UPSILON * acc / TAU.powi(n as i32 + 1)
}

// ---------------------------------------------------------------------------
// Monte Carlo

/// Reduced Monte Carlo path for `w_Gamma_n`: the wedges are collapsed
/// analytically, leaving a two-dimensional integral over the free wheel
/// vertex `y` with `x` pinned to `i`.
pub fn reduced_gamma_mc(n: u32, samples: u64, seed: u64) -> McEstimate {
    let query = WeightQuery { family: Family::Gamma, n };
    let x = HPoint { re: 0.0, im: 1.0 };
    let norm = TAU.powi(n as i32 + 2);
    run_chunked(query, samples, seed, default_chunks(samples), move |rng| {
        let (y, jac) = sample_halfplane(rng);
        if y.dist(&x) < COINCIDENCE_EPS || (y.re - x.re).abs() < 1e-12 {
            return None;
        }
        let s = sign_bulk(y, x).unwrap() as f64;
        // g = phi(x,y) - phi(y,x) + [x;y] pi, with [x;y] = -[y;x]
        let g = angle(x, y).unwrap() - angle(y, x).unwrap() - s * PI;
        let gx = angle_gradient(x, y).unwrap(); // d phi(x,y): v = y
        let gy = angle_gradient(y, x).unwrap(); // d phi(y,x): u = y
        let det = gx[2] * gy[1] - gx[3] * gy[0];
        Some(SIGN_GAMMA * g.powi(n as i32) * det * jac / norm)
    })
}

fn default_chunks(samples: u64) -> u64 {
    64.min(samples.max(1))
}

/// Draw one gauge-fixed configuration for `family` and return it with the
/// product of sampling Jacobians.
fn sample_config(family: Family, n: u32, rng: &mut impl Rng) -> (GaugeFixedConfig, f64) {
    let mut coords = Vec::new();
    let mut jac = 1.0;
    match family {
        Family::Gamma => {
            let (y, j) = sample_halfplane(rng);
            coords.extend([y.re, y.im]);
            jac *= j;
        }
        Family::Upsilon => {
            coords.push(rng.gen_range(0.0..PI));
            jac *= PI;
        }
        Family::Lambda => {}
    }
    for _ in 0..n {
        let (z, j) = sample_halfplane(rng);
        coords.extend([z.re, z.im]);
        jac *= j;
    }
    (GaugeFixedConfig { family, n, coords }, jac)
}

/// Row of edge-angle partials with respect to the gauge-fixed coordinates.
fn edge_row(cfg: &GaugeFixedConfig, edge: (Vertex, Vertex), row: &mut [f64]) {
    row.fill(0.0);
    let (src, tgt) = edge;
    let u = cfg.position(src);
    let v = cfg.position(tgt);
    let g = angle_gradient(u, v).expect("distinct points");
    let mut add = |vertex: Vertex, d_re: f64, d_im: f64| match (cfg.family, vertex) {
        (Family::Gamma, Vertex::Y) => {
            row[0] += d_re;
            row[1] += d_im;
        }
        (Family::Gamma, Vertex::Z(k)) => {
            row[2 + 2 * k as usize] += d_re;
            row[3 + 2 * k as usize] += d_im;
        }
        (Family::Upsilon, Vertex::X) => {
            // x = e^{i theta}
            let theta = cfg.coords[0];
            row[0] += d_re * (-theta.sin()) + d_im * theta.cos();
        }
        (Family::Upsilon, Vertex::Z(k)) => {
            row[1 + 2 * k as usize] += d_re;
            row[2 + 2 * k as usize] += d_im;
        }
        (Family::Lambda, Vertex::Z(k)) => {
            row[2 * k as usize] += d_re;
            row[1 + 2 * k as usize] += d_im;
        }
        // pinned vertices contribute nothing
        _ => {}
    };
    add(src, g[0], g[1]);
    add(tgt, g[2], g[3]);
}

/// Determinant by LU with partial pivoting; small `d`, in place.
fn determinant(mat: &mut [Vec<f64>]) -> f64 {
    let d = mat.len();
    let mut det = 1.0;
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&a, &b| mat[a][col].abs().partial_cmp(&mat[b][col].abs()).unwrap())
            .unwrap();
        if mat[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            mat.swap(pivot, col);
            det = -det;
        }
        det *= mat[col][col];
        for r in col + 1..d {
            let f = mat[r][col] / mat[col][col];
            for c in col..d {
                let sub = f * mat[col][c];
                mat[r][c] -= sub;
            }
        }
    }
    det
}

/// Full Monte Carlo over the gauge-fixed configuration space: every free
/// vertex is sampled and the integrand is the determinant of the edge-angle
/// Jacobian, one row per edge in the family's declared edge order.
pub fn full_mc(query: WeightQuery, samples: u64, seed: u64, chunks: u64) -> McEstimate {
    let WeightQuery { family, n } = query;
    if family == Family::Lambda && n == 0 {
        // C_{0,2} is a single point; the empty wedge product is 1
        return McEstimate {
            mean: 1.0,
            std_error: 0.0,
            samples,
            seed,
            query,
            degenerate: 0,
        };
    }
    let edges = edge_list(family, n);
    let d = edges.len();
    let norm = TAU.powi(d as i32);
    let sign = family_sign(family);
    run_chunked(query, samples, seed, chunks, move |rng| {
        let (cfg, jac) = sample_config(family, n, rng);
        if !distinct_enough(&cfg) {
            return None;
        }
        let mut mat: Vec<Vec<f64>> = vec![vec![0.0; d]; d];
        for (row, &edge) in edges.iter().enumerate() {
            edge_row(&cfg, edge, &mut mat[row]);
        }
        let det = determinant(&mut mat);
        Some(sign * det * jac / norm)
    })
}

fn distinct_enough(cfg: &GaugeFixedConfig) -> bool {
    let mut points = Vec::new();
    match cfg.family {
        Family::Gamma => {
            points.push(cfg.position(Vertex::X));
            points.push(cfg.position(Vertex::Y));
        }
        Family::Upsilon => {
            points.push(cfg.position(Vertex::X));
            points.push(cfg.position(Vertex::P));
        }
        Family::Lambda => {
            points.push(cfg.position(Vertex::P));
            points.push(cfg.position(Vertex::Q));
        }
    }
    for k in 0..cfg.n {
        points.push(cfg.position(Vertex::Z(k)));
    }
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            if a.dist(b) < COINCIDENCE_EPS {
                return false;
            }
        }
    }
    true
}

/// One row of a convergence table.
#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub samples: u64,
    pub estimate: f64,
    pub std_error: f64,
    pub abs_error: f64,
    pub z: f64,
}

/// Run `full_mc` along an ascending sample ladder and compare against the
/// exact closed form.
pub fn convergence_report(query: WeightQuery, ladder: &[u64], seed: u64) -> Vec<ConvergenceRow> {
    assert!(ladder.windows(2).all(|w| w[0] <= w[1]), "ladder must ascend");
    let exact_value = rational_to_f64(&exact::weight(query).value);
    ladder
        .iter()
        .map(|&samples| {
            let est = full_mc(query, samples, seed, default_chunks(samples));
            ConvergenceRow {
                samples,
                estimate: est.mean,
                std_error: est.std_error,
                abs_error: (est.mean - exact_value).abs(),
                z: est.z_score(exact_value),
            }
        })
        .collect()
}

pub fn rational_to_f64(r: &exact::BigRational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap_or(f64::NAN)
}
