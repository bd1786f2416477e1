//! Log-gamma, the regularized lower incomplete gamma function and its
//! inverse in the second argument.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Smallest value [`gamma_quantile`] will return.
pub const QUANTILE_FLOOR: f64 = 1e-300;

const MAX_QUANTILE_ITERATIONS: usize = 200;
const MAX_SERIES_TERMS: usize = 1_000_000;
const EPS: f64 = 1e-16;

// Lanczos approximation, g = 10.900511, eleven terms.
const LANCZOS_G: f64 = 10.900511;
const LANCZOS_COEFFS: [f64; 11] = [
    2.485_740_891_387_535_655_46e-5,
    1.051_423_785_817_219_742_10,
    -3.456_870_972_220_162_354_69,
    4.512_277_094_668_948_237_00,
    -2.982_852_253_235_766_556_21,
    1.056_397_115_771_267_130_77,
    -1.954_287_731_916_458_695_83e-1,
    1.709_705_434_044_412_243_07e-2,
    -5.719_261_174_043_057_812_83e-4,
    4.633_994_733_599_056_367_08e-6,
    -2.719_949_084_886_077_039_10e-9,
];
// ln(2 * sqrt(e / pi))
const LN_2_SQRT_E_OVER_PI: f64 = 0.620_782_237_635_245_222_345_518_445_781_647_212_251_852_727_9;

/// Natural log of the gamma function for `a > 0`.
pub fn log_gamma(a: f64) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Domain(format!("log_gamma requires a > 0, got {a}")));
    }
    Ok(ln_gamma_unchecked(a))
}

pub(crate) fn ln_gamma_unchecked(a: f64) -> f64 {
    if a < 0.5 {
        // ln Γ(a) = ln Γ(a + 1) - ln a
        return lanczos(a + 1.0) - a.ln();
    }
    lanczos(a)
}

fn lanczos(x: f64) -> f64 {
    let s = LANCZOS_COEFFS
        .iter()
        .enumerate()
        .skip(1)
        .fold(LANCZOS_COEFFS[0], |s, (k, c)| s + c / (x + k as f64 - 1.0));
    s.ln() + LN_2_SQRT_E_OVER_PI + (x - 0.5) * ((x - 0.5 + LANCZOS_G) / std::f64::consts::E).ln()
}

/// Stirling remainder ln Γ(a) - [(a - 1/2) ln a - a + ln(2π)/2], valid for a >= 10.
fn stirling_remainder(a: f64) -> f64 {
    let r = 1.0 / a;
    let r2 = r * r;
    r * (1.0 / 12.0
        - r2 * (1.0 / 360.0
            - r2 * (1.0 / 1260.0
                - r2 * (1.0 / 1680.0
                    - r2 * (1.0 / 1188.0 - r2 * (691.0 / 360_360.0 - r2 / 156.0))))))
}

/// d - ln(1 + d), accurate near d = 0.
fn log1pmx_neg(d: f64) -> f64 {
    if d.abs() < 0.5 {
        let mut term = d * d;
        let mut sum = 0.0;
        let mut k = 2.0;
        loop {
            let t = term / k;
            sum += t;
            if t.abs() <= sum.abs() * EPS {
                break;
            }
            term *= -d;
            k += 1.0;
        }
        sum
    } else {
        d - d.ln_1p()
    }
}

/// ln(x^a e^{-x} / Γ(a)).
fn ln_gamma_kernel(a: f64, x: f64) -> f64 {
    if a >= 10.0 {
        let d = (x - a) / a;
        -a * log1pmx_neg(d) + 0.5 * a.ln() - 0.5 * (2.0 * PI).ln() - stirling_remainder(a)
    } else {
        a * x.ln() - x - ln_gamma_unchecked(a)
    }
}

fn check_gamma_args(a: f64, x: f64) -> Result<()> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Domain(format!("shape must be positive, got {a}")));
    }
    if !(x >= 0.0) || x.is_nan() {
        return Err(Error::Domain(format!("x must be non-negative, got {x}")));
    }
    Ok(())
}

/// Regularized lower incomplete gamma P(a, x).
///
/// Series expansion below `x = a + 1`, Lentz continued fraction for the
/// upper tail above it.
pub fn reg_inc_gamma_p(a: f64, x: f64) -> Result<f64> {
    check_gamma_args(a, x)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    if x < a + 1.0 {
        lower_series(a, x)
    } else {
        Ok(1.0 - upper_continued_fraction(a, x)?)
    }
}

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x).
pub fn reg_inc_gamma_q(a: f64, x: f64) -> Result<f64> {
    check_gamma_args(a, x)?;
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    if x < a + 1.0 {
        Ok(1.0 - lower_series(a, x)?)
    } else {
        upper_continued_fraction(a, x)
    }
}

fn lower_series(a: f64, x: f64) -> Result<f64> {
    let mut denom = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..MAX_SERIES_TERMS {
        denom += 1.0;
        term *= x / denom;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            let p = sum * ln_gamma_kernel(a, x).exp();
            return Ok(p.clamp(0.0, 1.0));
        }
    }
    Err(Error::Numeric(format!(
        "incomplete gamma series did not converge for a={a}, x={x}"
    )))
}

fn upper_continued_fraction(a: f64, x: f64) -> Result<f64> {
    const TINY: f64 = 1e-300;
    let kernel = ln_gamma_kernel(a, x);
    if kernel < -745.0 {
        // far upper tail: Q underflows
        return Ok(0.0);
    }
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_SERIES_TERMS {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            let q = h * kernel.exp();
            return Ok(q.clamp(0.0, 1.0));
        }
    }
    Err(Error::Numeric(format!(
        "incomplete gamma continued fraction did not converge for a={a}, x={x}"
    )))
}

/// Inverse of the standard normal CDF (Acklam's rational approximation,
/// relative error ~1e-9). Only used to seed Newton iterations.
fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    }
}

/// Starting point for the quantile search, in log space.
fn initial_log_guess(a: f64, u: f64) -> f64 {
    if a >= 1.0 {
        // Wilson-Hilferty: (X/a)^(1/3) is approximately normal.
        let w = 1.0 / (9.0 * a);
        let z = normal_quantile(u);
        let cube = 1.0 - w + z * w.sqrt();
        if cube > 0.0 {
            return (a * cube * cube * cube).ln();
        }
        // Far lower tail: P(a, x) ~ x^a / Γ(a + 1).
        return (u.ln() + ln_gamma_unchecked(a + 1.0)) / a;
    }
    let t = 1.0 - a * (0.253 + a * 0.12);
    if u < t {
        (u / t).ln() / a
    } else {
        (1.0 - ((u - t) / (1.0 - t)).ln()).ln()
    }
}

/// Quantile of the unit-scale Gamma(a) distribution: the `x` with
/// `P(a, x) = u`.
///
/// Newton iterations on `ln x`, safeguarded by a bisection bracket. Results
/// are clamped to at least [`QUANTILE_FLOOR`]; when the true quantile lies
/// below the floor (tiny shapes) the floor itself is returned.
pub fn gamma_quantile(a: f64, u: f64) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Domain(format!("gamma_quantile: shape must be positive, got {a}")));
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("gamma_quantile: u must lie in (0, 1), got {u}")));
    }

    let ln_gamma_a = ln_gamma_unchecked(a);
    let mut lo = QUANTILE_FLOOR.ln();
    if reg_inc_gamma_p(a, QUANTILE_FLOOR)? >= u {
        return Ok(QUANTILE_FLOOR);
    }
    let mut hi = f64::INFINITY;

    let mut t = initial_log_guess(a, u).clamp(lo, 709.0);
    for _ in 0..MAX_QUANTILE_ITERATIONS {
        let x = t.exp();
        let f = reg_inc_gamma_p(a, x)? - u;
        if f == 0.0 {
            return Ok(x.max(QUANTILE_FLOOR));
        }
        if f < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        // dP/d(ln x) = x^a e^{-x} / Γ(a)
        let slope = if a >= 10.0 {
            ln_gamma_kernel(a, x).exp()
        } else {
            (a * t - x - ln_gamma_a).exp()
        };
        // at most a factor e^4 per step in x
        let newton = t - (f / slope).clamp(-4.0, 4.0);
        let next = if slope > 0.0 && newton.is_finite() && newton > lo && newton < hi {
            newton
        } else if hi.is_finite() {
            0.5 * (lo + hi)
        } else {
            t + 1.0
        };
        let tol = 1e-15 * t.abs().max(1.0);
        if (next - t).abs() <= tol || (hi - lo) <= tol {
            return Ok(next.exp().max(QUANTILE_FLOOR));
        }
        t = next;
    }
    Err(Error::Numeric(format!(
        "gamma_quantile did not converge after {MAX_QUANTILE_ITERATIONS} iterations (a={a}, u={u})"
    )))
}
