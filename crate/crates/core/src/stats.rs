//! Monte Carlo summaries.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    /// |value − target| in standard errors.
    pub fn z(&self, target: f64) -> f64 {
        (self.value - target).abs() / self.se
    }

    pub fn scaled(self, k: f64) -> Estimate {
        Estimate {
            value: self.value * k,
            se: self.se * k.abs(),
            n: self.n,
        }
    }
}

/// Sample mean and its standard error (Welford).
pub fn mean_se<I: IntoIterator<Item = f64>>(xs: I) -> Estimate {
    let mut n = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for x in xs {
        n += 1;
        let d = x - mean;
        mean += d / n as f64;
        m2 += d * (x - mean);
    }
    let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
    Estimate {
        value: mean,
        se: (var / n.max(1) as f64).sqrt(),
        n,
    }
}

/// Kolmogorov–Smirnov distance between the empirical law of `xs` and `cdf`.
pub fn ks_statistic(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford() {
        let e = mean_se([1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.value, 2.5);
        assert!((e.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(e.n, 4);
    }

    #[test]
    fn ks_uniform_grid() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_statistic(&xs, |x| x) - 0.005).abs() < 1e-12);
    }
}
