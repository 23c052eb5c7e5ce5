//! Exact rational evaluation of the three weight families.
//!
//! Everything here is big-rational arithmetic; powers of pi are carried
//! symbolically through [`PiMonomial`] so that the cancellation against the
//! `(2*pi)^{#edges}` normalization is checked structurally rather than
//! numerically.

use num::BigInt;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

/// Arbitrary-precision rational, always in lowest terms with positive
/// denominator (`num::BigRational` canonicalizes on construction).
pub type BigRational = num::BigRational;

/// The three graph families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gamma,
    Upsilon,
    Lambda,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Gamma => "gamma",
            Family::Upsilon => "upsilon",
            Family::Lambda => "lambda",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "gamma" => Ok(Family::Gamma),
            "upsilon" => Ok(Family::Upsilon),
            "lambda" => Ok(Family::Lambda),
            other => Err(format!("unknown family `{other}` (expected gamma, upsilon or lambda)")),
        }
    }
}

/// A weight lookup: `(family, n)` where `n` counts the wedges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WeightQuery {
    pub family: Family,
    pub n: u32,
}

/// Which evaluation path produced a [`WeightResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ClosedForm,
    BruteForceSum,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightResult {
    pub query: WeightQuery,
    pub value: BigRational,
    pub method: Method,
}

/// `coeff * pi^pi_power`, exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PiMonomial {
    pub coeff: BigRational,
    pub pi_power: u32,
}

impl PiMonomial {
    pub fn new(coeff: BigRational, pi_power: u32) -> Self {
        PiMonomial { coeff, pi_power }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExactError {
    #[error("hypergeometric series does not terminate: both upper parameters are positive")]
    NonTerminating,
    #[error("pole in lower parameter: (c)_{k} = 0 with nonzero numerator term")]
    PoleInC { k: u32 },
}

fn rat(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

fn rat_frac(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn pow2(e: u32) -> BigRational {
    BigRational::from_integer(BigInt::one() << e)
}

/// Binomial coefficient as an exact integer.
pub fn binomial(n: u32, k: u32) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let mut acc = BigInt::one();
    for i in 0..k.min(n - k) {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// Rising factorial `(a)_k = a (a+1) ... (a+k-1)`, with `(a)_0 = 1`.
pub fn pochhammer(a: &BigRational, k: u32) -> BigRational {
    let mut acc = BigRational::one();
    for i in 0..k {
        acc *= a + rat(i as i64);
    }
    acc
}

/// Terminating Gauss hypergeometric `2F1(a, b; c; z)` over the rationals.
///
/// Requires `a <= 0` or `b <= 0`; the series is summed up to the smaller
/// termination index when both qualify, so a lower-parameter pole beyond the
/// truncation point is harmless.
pub fn hyp2f1_terminating(a: i64, b: i64, c: i64, z: &BigRational) -> Result<BigRational, ExactError> {
    let cap = if a <= 0 && b <= 0 {
        (-a).min(-b)
    } else if a <= 0 {
        -a
    } else if b <= 0 {
        -b
    } else {
        return Err(ExactError::NonTerminating);
    };
    let (ar, br, cr) = (rat(a), rat(b), rat(c));
    let mut sum = BigRational::zero();
    // numer_k = (a)_k (b)_k z^k / k!, tracked incrementally
    let mut numer = BigRational::one();
    let mut denom = BigRational::one(); // (c)_k
    for k in 0..=cap as u32 {
        if k > 0 {
            let km1 = rat(k as i64 - 1);
            numer *= (&ar + &km1) * (&br + &km1) * z / rat(k as i64);
            denom *= &cr + km1;
        }
        if denom.is_zero() {
            if numer.is_zero() {
                continue;
            }
            return Err(ExactError::PoleInC { k });
        }
        sum += &numer / &denom;
    }
    Ok(sum)
}

/// Which path [`eval_wheel_moment`] takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentPath {
    BinomialSums,
    Hypergeometric,
}

/// The wheel-moment Stokes integral over `y` in the upper half-plane:
/// the value of `int [x;y]^s dphi(x,y)^m dphi(y,x)^n` with `s = 1` when
/// `signed`, as an exact multiple of `pi^(m+n)`.
pub fn eval_wheel_moment(m: u32, n: u32, signed: bool) -> PiMonomial {
    assert!(m >= 1 && n >= 1, "wheel moment needs m >= 1, n >= 1");
    eval_wheel_moment_via(m, n, signed, MomentPath::BinomialSums)
}

/// Same integral, with the evaluation path chosen explicitly; the two paths
/// agree identically (tested).
pub fn eval_wheel_moment_via(m: u32, n: u32, signed: bool, path: MomentPath) -> PiMonomial {
    assert!(m >= 1 && n >= 1);
    let coeff = match path {
        MomentPath::BinomialSums => {
            let mut first = BigRational::zero();
            for k in 0..=m {
                first += BigRational::new(
                    binomial(m, k) * BigInt::from(n),
                    BigInt::from(m + n - k),
                );
            }
            let mut second = BigRational::zero();
            for l in 0..=n - 1 {
                second += BigRational::new(
                    binomial(n - 1, l) * BigInt::from(n),
                    BigInt::from(m + n - l),
                );
            }
            if signed {
                -pow2(m) + first - second
            } else {
                pow2(m) - first - second
            }
        }
        MomentPath::Hypergeometric => {
            let (mi, ni) = (m as i64, n as i64);
            let z = -BigRational::one();
            let f1 = hyp2f1_terminating(-mi, -mi - ni, 1 - mi - ni, &z).expect("terminating");
            let f2 = hyp2f1_terminating(1 - ni, -mi - ni, 1 - mi - ni, &z).expect("terminating");
            let ratio = rat_frac(ni, mi + ni);
            if signed {
                -pow2(m) + ratio * (f1 - f2)
            } else {
                pow2(m) - ratio * (f1 + f2)
            }
        }
    };
    PiMonomial::new(coeff, m + n)
}

/// The boundary-moment Stokes integral `int (x;q)^s phi(q,x)^m dphi(x,q)^n`
/// over the one-dimensional configuration space of a bulk point tied to a
/// boundary point.
pub fn eval_boundary_moment(m: u32, n: u32, signed: bool) -> PiMonomial {
    assert!(n >= 1, "boundary moment needs n >= 1");
    if !signed && m == 0 {
        // (2 pi)^n
        PiMonomial::new(pow2(n), n)
    } else {
        PiMonomial::new(pow2(m), m + n)
    }
}

/// Closed-form weight of the wheel family `Gamma_n`: the double binomial sum
/// with both terminating hypergeometric terms. Vanishes for every even `n`.
pub fn weight_gamma(n: u32) -> BigRational {
    let ni = n as i64;
    let z = -BigRational::one();
    let mut sum = BigRational::zero();
    for k in 0..=n {
        let ki = k as i64;
        let sign_k = if k % 2 == 0 { 1 } else { -1 };
        for l in 0..=n - k {
            let li = l as i64;
            let pref = BigRational::new(
                binomial(n, k) * binomial(n - k, l) * BigInt::from(if l % 2 == 0 { 1i64 } else { -1 }),
                BigInt::from((ni - ki - li + 1) * (li + 1)),
            );
            let f1 = hyp2f1_terminating(-li, -ni + ki - 2, -ni + ki - 1, &z).expect("terminating");
            let f2 = hyp2f1_terminating(-ni + ki + li - 1, -ni + ki - 2, -ni + ki - 1, &z)
                .expect("terminating");
            let bracket = rat(sign_k) * pow2((n - k - l + 1) as u32)
                - rat_frac(li + 1, ni - ki + 2) * (f1 + rat(sign_k) * f2);
            sum += pref * bracket;
        }
    }
    sum / pow2(n + 2)
}

/// `Gamma_n` assembled from the wheel moments directly, bypassing the
/// hypergeometric rewrite. Must agree with [`weight_gamma`], exactly.
pub fn weight_gamma_bruteforce(n: u32) -> BigRational {
    let mut sum = BigRational::zero();
    for k in 0..=n {
        for l in 0..=n - k {
            let moment = eval_wheel_moment(n - k - l + 1, l + 1, k % 2 == 1);
            debug_assert_eq!(moment.pi_power, n - k + 2);
            let pref = BigRational::new(
                binomial(n, k) * binomial(n - k, l) * BigInt::from(if l % 2 == 0 { 1i64 } else { -1 }),
                BigInt::from(((n - k - l + 1) * (l + 1)) as i64),
            );
            sum += pref * moment.coeff;
        }
    }
    sum / pow2(n + 2)
}

/// Closed-form weight of the boundary-edge family:
/// `w_{Upsilon_n} = (1 + (-1)^n) / (2^(n+1) (n+1))`.
pub fn weight_upsilon(n: u32) -> BigRational {
    if n % 2 == 1 {
        return BigRational::zero();
    }
    BigRational::new(BigInt::from(2), BigInt::from(n + 1)) / pow2(n + 1)
}

/// Closed-form weight of the two-boundary family: `w_{Lambda_n} = 1 / 2^n`.
pub fn weight_lambda(n: u32) -> BigRational {
    pow2(n).recip()
}

/// Closed-form weight for any family.
pub fn weight(query: WeightQuery) -> WeightResult {
    let value = match query.family {
        Family::Gamma => weight_gamma(query.n),
        Family::Upsilon => weight_upsilon(query.n),
        Family::Lambda => weight_lambda(query.n),
    };
    WeightResult { query, value, method: Method::ClosedForm }
}

/// The three binomial sums of the boundary-family synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinomialSum {
    A,
    B,
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SumMethod {
    BruteForce,
    ClosedForm,
}

// lcm(1, 2, ..., n): common denominator for the harmonic-style terms.
fn lcm_upto(n: u32) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| {
        let k = BigInt::from(k);
        let g = num::Integer::gcd(&acc, &k);
        acc / g * k
    })
}

/// Evaluate `A(n)`, `B(n)` or `C(n)` either from the defining sums or from
/// the closed forms `A = B = (-1)^n / (2^(n+1)(n+1))`,
/// `C = (1 + (-1)^n) / (2^(n+1)(n+1))`.
pub fn binomial_sum(which: BinomialSum, n: u32, method: SumMethod) -> BigRational {
    let sign = if n % 2 == 0 { BigRational::one() } else { -BigRational::one() };
    match (which, method) {
        (BinomialSum::A, SumMethod::ClosedForm) | (BinomialSum::B, SumMethod::ClosedForm) => {
            sign / (pow2(n + 1) * rat(n as i64 + 1))
        }
        (BinomialSum::C, SumMethod::ClosedForm) => {
            (BigRational::one() + sign) / (pow2(n + 1) * rat(n as i64 + 1))
        }
        (BinomialSum::A, SumMethod::BruteForce) => {
            // Triple sum over (k, l, s). Two mechanical speedups keep n = 300
            // affordable: the s-sum depends only on m = n - k - l and is
            // evaluated once per value, and the whole accumulation runs over
            // the fixed common denominator 2^(n+1) lcm(1..n+1) so the hot
            // loop is integer-only (one rational reduction at the very end).
            let lcm = lcm_upto(n + 1);
            // inner[m] = lcm * sum_s C(m, s) (-2)^s / (m - s + 1)
            let inner: Vec<BigInt> = (0..=n)
                .map(|m| {
                    let mut acc = BigInt::zero();
                    let mut cs = BigInt::one(); // C(m, s)
                    let mut pow = BigInt::one(); // (-2)^s
                    for s in 0..=m {
                        acc += &cs * &pow * (&lcm / BigInt::from(m - s + 1));
                        pow *= -2;
                        if s < m {
                            cs = cs * BigInt::from(m - s) / BigInt::from(s + 1);
                        }
                    }
                    acc
                })
                .collect();
            let mut num = BigInt::zero();
            let mut ck = BigInt::one(); // C(n, k)
            for k in 0..=n {
                let j = n - k;
                let mut cl = BigInt::one(); // C(j, l)
                let mut acc_k = BigInt::zero();
                for l in 0..=j {
                    let term = &cl * &inner[(j - l) as usize];
                    if l % 2 == 0 {
                        acc_k += term;
                    } else {
                        acc_k -= term;
                    }
                    if l < j {
                        cl = cl * BigInt::from(j - l) / BigInt::from(l + 1);
                    }
                }
                num += (&ck << k) * acc_k; // C(n,k) 2^(n+1) / 2^(n-k+1) = C(n,k) 2^k
                if k < n {
                    ck = ck * BigInt::from(n - k) / BigInt::from(k + 1);
                }
            }
            BigRational::new(num, (BigInt::one() << (n + 1)) * lcm)
        }
        (BinomialSum::B, SumMethod::BruteForce) => {
            let lcm = lcm_upto(n + 1);
            let mut num = BigInt::zero();
            let mut cl = BigInt::one(); // C(n, l)
            for l in 0..=n {
                let term = &cl * (&lcm / BigInt::from(n - l + 1));
                if l % 2 == 0 {
                    num += term;
                } else {
                    num -= term;
                }
                if l < n {
                    cl = cl * BigInt::from(n - l) / BigInt::from(l + 1);
                }
            }
            BigRational::new(num, (BigInt::one() << (n + 1)) * lcm)
        }
        (BinomialSum::C, SumMethod::BruteForce) => {
            let lcm = lcm_upto(n + 1);
            let mut num = BigInt::zero();
            let mut cl = BigInt::one(); // C(n, l)
            for l in 0..=n {
                // 2^n / 2^l keeps the fixed common denominator 2^n lcm
                let term = (&cl << (n - l)) * (&lcm / BigInt::from(n - l + 1));
                if l % 2 == 0 {
                    num += term;
                } else {
                    num -= term;
                }
                if l < n {
                    cl = cl * BigInt::from(n - l) / BigInt::from(l + 1);
                }
            }
            BigRational::new(num, (BigInt::one() << n) * lcm)
        }
    }
}

/// Render a rational as `p/q` (or just `p` for integers), `q > 0`.
pub fn render_rational(r: &BigRational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Decimal approximation with 12 significant digits, round half to even.
pub fn render_decimal(r: &BigRational) -> String {
    const SIG: i64 = 12;
    if r.is_zero() {
        return "0".to_string();
    }
    let neg = r.is_negative();
    let abs = r.abs();
    // exponent e such that 10^(e-1) <= abs < 10^e
    let mut e: i64 = 0;
    let ten = BigRational::from_integer(BigInt::from(10));
    let mut scaled = abs.clone();
    while scaled >= ten {
        scaled /= &ten;
        e += 1;
    }
    while scaled < BigRational::one() {
        scaled *= &ten;
        e -= 1;
    }
    e += 1;
    // round abs * 10^(SIG - e) half-to-even to an integer of SIG digits
    let shift = SIG - e;
    let mut scaled = abs;
    for _ in 0..shift.abs() {
        if shift > 0 {
            scaled *= &ten;
        } else {
            scaled /= &ten;
        }
    }
    let floor = scaled.floor().to_integer();
    let frac = &scaled - BigRational::from_integer(floor.clone());
    let half = rat_frac(1, 2);
    let digits = match frac.cmp(&half) {
        std::cmp::Ordering::Less => floor,
        std::cmp::Ordering::Greater => floor + 1,
        std::cmp::Ordering::Equal => {
            if (floor.clone() % BigInt::from(2)).is_zero() {
                floor
            } else {
                floor + 1
            }
        }
    };
    let mut ds = digits.to_string();
    // rounding may have carried to SIG + 1 digits
    let e = if ds.len() as i64 > SIG { e + 1 } else { e };
    ds.truncate(SIG as usize);
    while ds.len() < SIG as usize {
        ds.push('0');
    }
    let sign = if neg { "-" } else { "" };
    if e >= 1 && e <= SIG {
        let ip = e as usize;
        if ip == ds.len() {
            format!("{}{}", sign, ds)
        } else {
            format!("{}{}.{}", sign, &ds[..ip], &ds[ip..])
        }
    } else if e <= 0 && e > -4 {
        format!("{}0.{}{}", sign, "0".repeat(-e as usize), ds)
    } else {
        format!("{}{}.{}e{}", sign, &ds[..1], &ds[1..], e - 1)
    }
}
