//! Adaptive Gauss–Kronrod quadrature and improper-integral divergence detection.

use serde::Serialize;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 15-point Kronrod rule with embedded 7-point Gauss error estimate.
pub fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive quadrature on a finite interval; the integrand must be finite.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut bad = false;
    let mut g = |x: f64| {
        let v = f(x);
        if !v.is_finite() {
            bad = true;
            0.0
        } else {
            v
        }
    };
    let (v0, e0) = gk15(&mut g, lo, hi);
    let mut segs = vec![(lo, hi, v0, e0)];
    let mut total = v0;
    let mut err = e0;
    let mut iters = 0;
    while err > rel_tol.max(1e-15) * total.abs() && err > 1e-300 {
        iters += 1;
        if iters > 4000 {
            return Err(Error::Quadrature(format!(
                "no convergence on [{lo}, {hi}]: estimate {total}, error {err}"
            )));
        }
        let (i, _) = segs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .3.total_cmp(&b.1 .3))
            .unwrap();
        let (s0, s1, v, e) = segs.swap_remove(i);
        let m = 0.5 * (s0 + s1);
        let (va, ea) = gk15(&mut g, s0, m);
        let (vb, eb) = gk15(&mut g, m, s1);
        total += va + vb - v;
        err += ea + eb - e;
        segs.push((s0, m, va, ea));
        segs.push((m, s1, vb, eb));
        if m <= s0 || m >= s1 {
            break;
        }
    }
    if bad {
        return Err(Error::Quadrature(format!("non-finite integrand on [{lo}, {hi}]")));
    }
    // re-sum to shed accumulated cancellation
    let total: f64 = segs.iter().map(|s| s.2).sum();
    Ok(sign * total)
}

/// Integral over a possibly infinite interval, via x = c + u/(1−u) on infinite sides.
pub fn integrate_any<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    any_dyn(&mut f, a, b, rel_tol)
}

fn any_dyn(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    match (a.is_finite(), b.is_finite()) {
        (true, true) => integrate(f, a, b, rel_tol),
        (true, false) => {
            let s = if b > 0.0 { 1.0 } else { -1.0 };
            integrate(
                |u: f64| {
                    if u >= 1.0 {
                        return 0.0;
                    }
                    let w = 1.0 - u;
                    f(a + s * u / w) / (w * w)
                },
                0.0,
                1.0,
                rel_tol,
            )
            .map(|v| s * v)
        }
        (false, true) => any_dyn(&mut |x| f(-x), -b, -a, rel_tol),
        (false, false) => {
            let l = any_dyn(f, a, 0.0, rel_tol)?;
            let r = any_dyn(f, 0.0, b, rel_tol)?;
            Ok(l + r)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Yes,
    No,
    Inconclusive,
}

impl Verdict {
    pub fn from_bool(b: bool) -> Verdict {
        if b {
            Verdict::Yes
        } else {
            Verdict::No
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Yes => "yes",
            Verdict::No => "no",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// Outcome of an improper integral ∫_a^e f toward a singular or infinite endpoint e.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Improper {
    Finite(f64),
    /// Diverges; the sign of the divergence.
    Infinite(f64),
    /// Last partial value when neither rule fired.
    Inconclusive(f64),
}

impl Improper {
    pub fn is_finite(&self) -> Verdict {
        match self {
            Improper::Finite(_) => Verdict::Yes,
            Improper::Infinite(_) => Verdict::No,
            Improper::Inconclusive(_) => Verdict::Inconclusive,
        }
    }

    pub fn diverges(&self) -> Verdict {
        match self {
            Improper::Finite(_) => Verdict::No,
            Improper::Infinite(_) => Verdict::Yes,
            Improper::Inconclusive(_) => Verdict::Inconclusive,
        }
    }
}

pub const GROWTH_FACTOR: f64 = 1.5;
pub const GROWTH_RUN: usize = 6;
pub const FINITE_REL: f64 = 1e-8;

/// Truncation points approaching `end` from `from`, geometric with factor 10.
pub fn truncations(from: f64, end: f64) -> impl Iterator<Item = f64> {
    let mut k = 0i32;
    let mut last = from;
    std::iter::from_fn(move || {
        k += 1;
        let p = if end.is_finite() {
            end - (end - from) * 10f64.powi(-k)
        } else {
            let unit = from.abs().max(1.0);
            from + end.signum() * unit * 10f64.powi(k - 1)
        };
        if p == last || !p.is_finite() || (end.is_finite() && p == end) {
            return None;
        }
        last = p;
        Some(p)
    })
}

/// Divergence test for ∫_from^end f over successive truncations.
///
/// Infinite when partial sums grow by ≥1.5× over 6 successive truncations, or
/// when the segment increments stop shrinking for 6 truncations (logarithmic
/// divergence); finite when successive partial sums agree to 1e−8 relative.
pub fn improper<F: FnMut(f64) -> f64>(f: F, from: f64, end: f64) -> Improper {
    improper_trace(f, from, end).0
}

/// As [`improper`], also returning the truncation points and partial sums.
pub fn improper_trace<F: FnMut(f64) -> f64>(mut f: F, from: f64, end: f64) -> (Improper, Vec<(f64, f64)>) {
    let mut sum = 0.0;
    let mut prev = from;
    let mut growth = 0;
    let mut flat = 0;
    let mut last_inc: Option<f64> = None;
    let mut trace = Vec::new();
    for p in truncations(from, end).take(80) {
        let mut overflow = 0.0;
        let inc = match integrate(
            |z| {
                let v = f(z);
                if v.is_infinite() {
                    overflow = v;
                }
                v
            },
            prev,
            p,
            1e-11,
        ) {
            Ok(v) if v.is_finite() => v,
            // an integrand overflowing f64 on the way out is divergence
            _ if overflow != 0.0 => return (Improper::Infinite(overflow.signum()), trace),
            Ok(v) if v.is_infinite() => return (Improper::Infinite(v.signum()), trace),
            _ => return (Improper::Inconclusive(sum), trace),
        };
        let old = sum;
        sum += inc;
        prev = p;
        trace.push((p, sum));
        if old != 0.0 && (sum - old).abs() <= FINITE_REL * sum.abs() {
            // geometric tail estimate from the last two increments
            let tail = match last_inc {
                Some(li) if li != 0.0 && (inc / li) > 0.0 && (inc / li) < 0.9 => inc * (inc / li) / (1.0 - inc / li),
                _ => 0.0,
            };
            return (Improper::Finite(sum + tail), trace);
        }
        if old != 0.0 && sum.abs() >= GROWTH_FACTOR * old.abs() && sum.signum() == old.signum() {
            growth += 1;
        } else {
            growth = 0;
        }
        match last_inc {
            Some(li) if inc.abs() >= 0.999 * li.abs() && inc.signum() == li.signum() && inc != 0.0 => flat += 1,
            _ => flat = 0,
        }
        last_inc = Some(inc);
        if growth >= GROWTH_RUN || flat >= GROWTH_RUN {
            return (Improper::Infinite(sum.signum()), trace);
        }
    }
    (Improper::Inconclusive(sum), trace)
}

/// Bisection root of a monotone function on [lo, hi] (finite bracket).
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, target: f64) -> Result<f64> {
    let flo = f(lo) - target;
    let fhi = f(hi) - target;
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() || flo.is_nan() || fhi.is_nan() {
        return Err(Error::Bracketing(format!("no sign change on [{lo}, {hi}] for target {target}")));
    }
    let inc = fhi > flo;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = f(mid) - target;
        if (v > 0.0) == inc {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_integrals() {
        let v = integrate(|x| x.sin(), 0.0, std::f64::consts::PI, 1e-12).unwrap();
        assert!((v - 2.0).abs() < 1e-13);
        let v = integrate(|x| x.sqrt(), 0.0, 1.0, 1e-12).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-11);
        let v = integrate(|x| x, 1.0, 0.0, 1e-12).unwrap();
        assert!((v + 0.5).abs() < 1e-15);
        let v = integrate_any(|x| (-x * x).exp(), f64::NEG_INFINITY, f64::INFINITY, 1e-12).unwrap();
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-11);
        let v = integrate_any(|x| (-x).exp(), 2.0, f64::INFINITY, 1e-12).unwrap();
        assert!((v - (-2.0f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn divergence_rules() {
        // ∫_1^∞ z^{-3} = 1/2
        match improper(|z| z.powi(-3), 1.0, f64::INFINITY) {
            Improper::Finite(v) => assert!((v - 0.5).abs() < 1e-9),
            o => panic!("{o:?}"),
        }
        // ∫_1^∞ 1/z diverges logarithmically
        assert_eq!(improper(|z| 1.0 / z, 1.0, f64::INFINITY), Improper::Infinite(1.0));
        // ∫_0^1 x^{-3} diverges
        assert_eq!(improper(|x| x.powi(-3), 1.0, 0.0), Improper::Infinite(-1.0));
        // ∫_0^1 x^{-1/2} = 2
        match improper(|x| x.powf(-0.5), 1.0, 0.0) {
            Improper::Finite(v) => assert!((v + 2.0).abs() < 1e-7),
            o => panic!("{o:?}"),
        }
        assert_eq!(improper(|_| 1.0, 0.0, f64::NEG_INFINITY), Improper::Infinite(-1.0));
    }

    #[test]
    fn bisection() {
        let r = bisect(|x| x * x, 0.0, 3.0, 2.0).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-14);
        assert!(bisect(|x| x * x, 2.0, 3.0, 2.0).is_err());
    }
}
