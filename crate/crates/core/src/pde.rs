//! European pricing under possibly-bubbly dynamics: the transformed Cauchy
//! problem for w = v/x, and the naive equation for comparison.

use std::io::Write;

use serde::Serialize;

use crate::coeffs::Coef;
use crate::diffusion::{DiffusionSpec, ScaleSpeed};
use crate::error::{Error, Result};
use crate::quad::Verdict;

const BLOWUP: f64 = 1e10;

/// Log-uniform space grid through the spot and a uniform time grid.
#[derive(Debug, Clone, Serialize)]
pub struct Grid1D {
    pub xs: Vec<f64>,
    pub n_t: usize,
    pub horizon: f64,
    spot_index: usize,
}

impl Grid1D {
    /// `n_x` intervals on [x_min, x_max] in ln x, shifted so the spot is a node.
    pub fn log_uniform(spot: f64, x_min: f64, x_max: f64, n_x: usize, n_t: usize, horizon: f64) -> Result<Grid1D> {
        if !(0.0 < x_min && x_min < spot && spot < x_max && x_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < x_min < spot < x_max; got {x_min}, {spot}, {x_max}"
            )));
        }
        if n_x < 4 || n_t == 0 {
            return Err(Error::InvalidParameter("grid needs n_x >= 4 and n_t >= 1".into()));
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be >= 0, got {horizon}")));
        }
        let h = (x_max / x_min).ln() / n_x as f64;
        let j = ((spot / x_min).ln() / h).round().clamp(1.0, (n_x - 1) as f64) as usize;
        let lo = spot.ln() - j as f64 * h;
        let mut xs: Vec<f64> = (0..=n_x).map(|i| (lo + i as f64 * h).exp()).collect();
        xs[j] = spot;
        Ok(Grid1D {
            xs,
            n_t,
            horizon,
            spot_index: j,
        })
    }

    /// Defaults: x ∈ [1e−4·spot, 1e4·spot].
    pub fn default_for(spot: f64, horizon: f64, n_x: usize, n_t: usize) -> Result<Grid1D> {
        Grid1D::log_uniform(spot, 1e-4 * spot, 1e4 * spot, n_x, n_t, horizon)
    }

    pub fn spot(&self) -> f64 {
        self.xs[self.spot_index]
    }

    pub fn spot_index(&self) -> usize {
        self.spot_index
    }

    fn h(&self) -> f64 {
        (self.xs[1] / self.xs[0]).ln()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_t).map(|k| self.horizon * k as f64 / self.n_t as f64).collect()
    }
}

#[derive(Debug, Clone)]
pub struct PricingProblem {
    pub spec: DiffusionSpec,
    pub payoff: Coef,
    pub horizon: f64,
    pub spot: f64,
    zero_accessible: bool,
    pub strict_local_martingale: Verdict,
}

impl PricingProblem {
    pub fn new(spec: &DiffusionSpec, payoff: Coef, horizon: f64, spot: f64) -> Result<PricingProblem> {
        if !spec.is_natural_scale() || spec.interval() != (0.0, f64::INFINITY) {
            return Err(Error::Precondition("pricing needs a driftless diffusion on (0, inf)".into()));
        }
        spec.check_interior("spot", spot)?;
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be >= 0, got {horizon}")));
        }
        let mut ratios = Vec::new();
        for k in -12..=24 {
            let x = 10f64.powf(k as f64 / 4.0);
            let g = payoff.eval(x)?;
            if g < 0.0 {
                return Err(Error::Precondition(format!("payoff is negative at {x}: {g}")));
            }
            ratios.push(g / (1.0 + x));
        }
        // linear growth: g/(1+x) must not keep growing over the last three decades
        let mid = ratios[..25].iter().cloned().fold(0.0, f64::max);
        let tail = ratios[25..].iter().cloned().fold(0.0, f64::max);
        if tail > 2.0 * mid + 1e-300 && tail > 1e-12 {
            return Err(Error::Precondition("payoff grows faster than linearly".into()));
        }
        let ss = ScaleSpeed::new(spec)?;
        let rep = ss.classify();
        let zero_accessible = rep.left.accessible == Verdict::Yes;
        if zero_accessible {
            if let Ok(g0) = payoff.eval(0.0) {
                if g0 != 0.0 {
                    return Err(Error::Precondition(format!("0 is accessible, so g(0) must be 0 (got {g0})")));
                }
            }
        }
        let strict = match rep.martingale {
            Some(Verdict::Yes) => Verdict::No,
            Some(Verdict::No) => Verdict::Yes,
            _ => Verdict::Inconclusive,
        };
        Ok(PricingProblem {
            spec: spec.clone(),
            payoff,
            horizon,
            spot,
            zero_accessible,
            strict_local_martingale: strict,
        })
    }

    pub fn zero_accessible(&self) -> bool {
        self.zero_accessible
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Equation {
    /// w_t = ½σ²w_xx + (σ²/x)w_x, w = v/x
    Transformed,
    /// v_t = ½σ²v_xx
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum FarField {
    /// v(x_max) = g(x_max)
    PayoffLinear,
    Dirichlet(f64),
}

/// Values at every time level.
#[derive(Debug, Clone, Serialize)]
pub struct GridFunction {
    pub xs: Vec<f64>,
    pub times: Vec<f64>,
    /// values[k][i] at times[k], xs[i]
    pub values: Vec<Vec<f64>>,
    pub equation: Equation,
    pub right_boundary: String,
    pub left_boundary: String,
}

impl GridFunction {
    pub fn last(&self) -> &[f64] {
        self.values.last().unwrap()
    }

    /// Linear interpolation in ln x at the final time.
    pub fn at(&self, x: f64) -> f64 {
        interp_log(&self.xs, self.last(), x)
    }

    /// Surface CSV: t, x, w, v (every `stride`-th node and level).
    pub fn write_surface<W: Write>(&self, other: Option<&GridFunction>, stride: usize, mut out: W) -> std::io::Result<()> {
        let stride = stride.max(1);
        writeln!(out, "t,x,w,v")?;
        for (k, t) in self.times.iter().enumerate() {
            if k % stride != 0 && k + 1 != self.times.len() {
                continue;
            }
            for (i, x) in self.xs.iter().enumerate() {
                if i % stride != 0 && i + 1 != self.xs.len() {
                    continue;
                }
                let w = self.values[k][i];
                let v = other.map(|o| o.values[k][i]).unwrap_or(x * w);
                writeln!(out, "{t:.16e},{x:.16e},{w:.16e},{v:.16e}")?;
            }
        }
        Ok(())
    }
}

fn interp_log(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let i = xs.partition_point(|&v| v <= x) - 1;
    let t = (x / xs[i]).ln() / (xs[i + 1] / xs[i]).ln();
    ys[i] + t * (ys[i + 1] - ys[i])
}

/// Thomas algorithm; a = sub, b = diag, c = super.
fn tridiag(a: &[f64], b: &[f64], c: &[f64], d: &mut [f64]) {
    let n = d.len();
    let mut cp = vec![0.0; n];
    let mut beta = b[0];
    d[0] /= beta;
    for i in 1..n {
        cp[i - 1] = c[i - 1] / beta;
        beta = b[i] - a[i] * cp[i - 1];
        d[i] = (d[i] - a[i] * d[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        d[i] -= cp[i] * d[i + 1];
    }
}

struct Operator {
    // L u_i = lo_i u_{i−1} + di_i u_i + up_i u_{i+1} on interior nodes
    lo: Vec<f64>,
    di: Vec<f64>,
    up: Vec<f64>,
}

/// Coefficients in ξ = ln x: D u_ξξ + V u_ξ with D = σ²/(2x²), V = ±D.
fn operator(spec: &DiffusionSpec, xs: &[f64], h: f64, eq: Equation) -> Result<Operator> {
    let n = xs.len();
    let mut op = Operator {
        lo: vec![0.0; n],
        di: vec![0.0; n],
        up: vec![0.0; n],
    };
    for i in 1..n - 1 {
        let s = spec.sigma(xs[i])?;
        let d = 0.5 * s * s / (xs[i] * xs[i]);
        let v = if eq == Equation::Transformed { d } else { -d };
        // exponential fitting once the cell Péclet number exceeds 2
        let pe = v * h / d;
        let df = if pe.abs() > 2.0 { d * 0.5 * pe / (0.5 * pe).tanh() } else { d };
        op.lo[i] = df / (h * h) - v / (2.0 * h);
        op.di[i] = -2.0 * df / (h * h);
        op.up[i] = df / (h * h) + v / (2.0 * h);
    }
    Ok(op)
}

struct Boundary {
    right: f64,
    // w_0 = α w_1 + β w_2 (linear in x through nodes 1, 2)
    alpha: f64,
    beta: f64,
}

fn march(op: &Operator, grid: &Grid1D, init: Vec<f64>, bc: &Boundary) -> Result<Vec<Vec<f64>>> {
    let n = grid.xs.len();
    let m = n - 2; // unknowns 1..=n−2
    let dt = grid.horizon / grid.n_t as f64;
    let mut levels = vec![init];
    if grid.horizon == 0.0 {
        for _ in 0..grid.n_t {
            levels.push(levels[0].clone());
        }
        return Ok(levels);
    }
    // (I − θkL) u^{n+1} = (I + (1−θ)kL) u^n
    let step = |u: &[f64], k: f64, theta: f64| -> Vec<f64> {
        let mut a = vec![0.0; m];
        let mut b = vec![0.0; m];
        let mut c = vec![0.0; m];
        let mut d = vec![0.0; m];
        for j in 0..m {
            let i = j + 1;
            let lu = op.lo[i] * u[i - 1] + op.di[i] * u[i] + op.up[i] * u[i + 1];
            d[j] = u[i] + (1.0 - theta) * k * lu;
            a[j] = -theta * k * op.lo[i];
            b[j] = 1.0 - theta * k * op.di[i];
            c[j] = -theta * k * op.up[i];
        }
        // eliminate w_0 from the first row, move w_{n−1} to the rhs
        b[0] += a[0] * bc.alpha;
        if m > 1 {
            c[0] += a[0] * bc.beta;
        }
        d[m - 1] -= c[m - 1] * bc.right;
        tridiag(&a, &b, &c, &mut d);
        let mut out = Vec::with_capacity(n);
        out.push(bc.alpha * d[0] + bc.beta * d.get(1).copied().unwrap_or(d[0]));
        out.extend_from_slice(&d);
        out.push(bc.right);
        out
    };
    let mut u = levels[0].clone();
    for k in 0..grid.n_t {
        u = if k < 2 {
            // Rannacher start: each of the first two steps as two implicit half-steps
            let half = step(&u, 0.5 * dt, 1.0);
            step(&half, 0.5 * dt, 1.0)
        } else {
            step(&u, dt, 0.5)
        };
        if u.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP) {
            return Err(Error::Unstable { dt, suggested: dt / 4.0 });
        }
        levels.push(u.clone());
    }
    Ok(levels)
}

fn left_extrapolation(xs: &[f64]) -> (f64, f64) {
    let t = (xs[0] - xs[1]) / (xs[2] - xs[1]);
    (1.0 - t, t)
}

/// Crank–Nicolson for w with w(0,x) = g(x)/x, w = 0 at x_max.
pub fn solve_transformed(problem: &PricingProblem, grid: &Grid1D) -> Result<GridFunction> {
    check_grid(problem, grid)?;
    let op = operator(&problem.spec, &grid.xs, grid.h(), Equation::Transformed)?;
    let mut init = Vec::with_capacity(grid.xs.len());
    for &x in &grid.xs {
        init.push(problem.payoff.eval(x)? / x);
    }
    *init.last_mut().unwrap() = 0.0;
    let (alpha, beta) = left_extrapolation(&grid.xs);
    let values = march(&op, grid, init, &Boundary { right: 0.0, alpha, beta })?;
    Ok(GridFunction {
        xs: grid.xs.clone(),
        times: grid.times(),
        values,
        equation: Equation::Transformed,
        right_boundary: "dirichlet w=0".into(),
        left_boundary: "linear extrapolation".into(),
    })
}

fn check_grid(problem: &PricingProblem, grid: &Grid1D) -> Result<()> {
    if (grid.horizon - problem.horizon).abs() > 1e-14 * problem.horizon.max(1.0) {
        return Err(Error::InvalidParameter("grid horizon differs from the problem horizon".into()));
    }
    if !(grid.xs[0] < problem.spot && problem.spot < *grid.xs.last().unwrap()) {
        return Err(Error::InvalidParameter("grid does not span the spot".into()));
    }
    Ok(())
}

/// v(T, spot) and the surface v = x·w.
pub fn price_european(problem: &PricingProblem, grid: &Grid1D) -> Result<(f64, GridFunction)> {
    if problem.horizon == 0.0 {
        let g = problem.payoff.eval(problem.spot)?;
        let xs = grid.xs.clone();
        let vals = xs.iter().map(|&x| problem.payoff.eval(x).unwrap_or(f64::NAN)).collect();
        return Ok((
            g,
            GridFunction {
                xs,
                times: vec![0.0],
                values: vec![vals],
                equation: Equation::Transformed,
                right_boundary: "dirichlet w=0".into(),
                left_boundary: "linear extrapolation".into(),
            },
        ));
    }
    let w = solve_transformed(problem, grid)?;
    let mut v = w.clone();
    for level in &mut v.values {
        for (val, x) in level.iter_mut().zip(&w.xs) {
            *val *= x;
        }
    }
    if problem.zero_accessible {
        v.xs.insert(0, 0.0);
        for level in &mut v.values {
            level.insert(0, 0.0);
        }
        v.left_boundary = "v(t,0)=0".into();
    }
    Ok((v.last()[grid.spot_index() + problem.zero_accessible as usize], v))
}

/// Crank–Nicolson on v_t = ½σ²v_xx with v(0,·) = g and the chosen far field.
pub fn solve_naive(problem: &PricingProblem, grid: &Grid1D, farfield: FarField) -> Result<GridFunction> {
    check_grid(problem, grid)?;
    let op = operator(&problem.spec, &grid.xs, grid.h(), Equation::Naive)?;
    let mut init = Vec::with_capacity(grid.xs.len());
    for &x in &grid.xs {
        init.push(problem.payoff.eval(x)?);
    }
    let xmax = *grid.xs.last().unwrap();
    let right = match farfield {
        FarField::PayoffLinear => problem.payoff.eval(xmax)?,
        FarField::Dirichlet(v) => v,
    };
    *init.last_mut().unwrap() = right;
    let (alpha, beta) = left_extrapolation(&grid.xs);
    let values = march(&op, grid, init, &Boundary { right, alpha, beta })?;
    Ok(GridFunction {
        xs: grid.xs.clone(),
        times: grid.times(),
        values,
        equation: Equation::Naive,
        right_boundary: match farfield {
            FarField::PayoffLinear => format!("payoff-linear v={right}"),
            FarField::Dirichlet(v) => format!("dirichlet v={v}"),
        },
        left_boundary: "linear extrapolation".into(),
    })
}

/// v(t,x)/x at the requested states, t on the grid's time levels.
pub fn sublinearity_profile(problem: &PricingProblem, grid: &Grid1D, t: f64, xs: &[f64]) -> Result<Vec<f64>> {
    let w = solve_transformed(problem, grid)?;
    let k = ((t / grid.horizon) * grid.n_t as f64).round() as usize;
    let level = w
        .values
        .get(k)
        .ok_or_else(|| Error::InvalidParameter(format!("t = {t} is beyond the horizon")))?;
    Ok(xs.iter().map(|&x| interp_log(&w.xs, level, x)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{expand_family, normal_cdf, ModelFamily};

    fn ib3() -> DiffusionSpec {
        expand_family(&ModelFamily::InverseBessel3).unwrap()
    }

    fn exact(t: f64, x: f64) -> f64 {
        2.0 * normal_cdf(1.0 / (x * t.sqrt())) - 1.0
    }

    #[test]
    fn bubble_price() {
        let p = PricingProblem::new(&ib3(), Coef::parse("x").unwrap(), 1.0, 1.0).unwrap();
        assert_eq!(p.strict_local_martingale, Verdict::Yes);
        let g = Grid1D::default_for(1.0, 1.0, 400, 400).unwrap();
        let (v, surf) = price_european(&p, &g).unwrap();
        assert!((v / exact(1.0, 1.0) - 1.0).abs() < 5e-3, "{v}");
        assert!(surf.values.iter().flatten().all(|&z| z >= -1e-12));
        let prof = sublinearity_profile(&p, &g, 1.0, &[1.0, 10.0, 100.0]).unwrap();
        assert!(prof[0] > prof[1] && prof[1] > prof[2]);
        assert!(prof[2] < 0.05);
    }

    #[test]
    fn trivial_cases() {
        let p = PricingProblem::new(&ib3(), Coef::constant(0.0), 1.0, 1.0).unwrap();
        let g = Grid1D::default_for(1.0, 1.0, 100, 50).unwrap();
        let w = solve_transformed(&p, &g).unwrap();
        assert!(w.values.iter().flatten().all(|&z| z == 0.0));
        let p0 = PricingProblem::new(&ib3(), Coef::parse("min(x, 2)").unwrap(), 0.0, 1.5).unwrap();
        let g0 = Grid1D::default_for(1.5, 0.0, 100, 10).unwrap();
        assert_eq!(price_european(&p0, &g0).unwrap().0, 1.5);
        let pk = PricingProblem::new(&ib3(), Coef::parse("min(x, 2)").unwrap(), 1.0, 1.0).unwrap();
        let (_, v) = price_european(&pk, &Grid1D::default_for(1.0, 1.0, 200, 100).unwrap()).unwrap();
        assert!(v.values.iter().flatten().all(|&z| z <= 2.0 + 1e-9));
        assert!(PricingProblem::new(&ib3(), Coef::parse("x^2").unwrap(), 1.0, 1.0).is_err());
        assert!(PricingProblem::new(&ib3(), Coef::parse("-x").unwrap(), 1.0, 1.0).is_err());
    }

    #[test]
    fn martingale_conserves() {
        let gbm = expand_family(&ModelFamily::Gbm(0.3)).unwrap();
        let p = PricingProblem::new(&gbm, Coef::parse("x").unwrap(), 1.0, 1.0).unwrap();
        let g = Grid1D::default_for(1.0, 1.0, 400, 200).unwrap();
        let (_, v) = price_european(&p, &g).unwrap();
        for x in [0.1, 1.0, 10.0] {
            assert!((v.at(x) / x - 1.0).abs() < 5e-3, "{x}");
        }
        let naive = solve_naive(&p, &g, FarField::PayoffLinear).unwrap();
        assert!((naive.at(1.0) - v.at(1.0)).abs() < 1e-2);
    }

    #[test]
    fn naive_is_bubble_blind() {
        let p = PricingProblem::new(&ib3(), Coef::parse("x").unwrap(), 1.0, 1.0).unwrap();
        let g = Grid1D::default_for(1.0, 1.0, 400, 400).unwrap();
        let naive = solve_naive(&p, &g, FarField::PayoffLinear).unwrap();
        assert!(naive.at(1.0) >= 0.99);
        let zero_far = solve_naive(&p, &g, FarField::Dirichlet(0.0)).unwrap();
        assert!(zero_far.at(1.0) < naive.at(1.0));
    }

    #[test]
    fn truncation_insensitive() {
        let p = PricingProblem::new(&ib3(), Coef::parse("x").unwrap(), 1.0, 1.0).unwrap();
        let base = price_european(&p, &Grid1D::log_uniform(1.0, 1e-4, 1e4, 400, 400, 1.0).unwrap()).unwrap().0;
        let wide = price_european(&p, &Grid1D::log_uniform(1.0, 1e-4, 2e4, 408, 400, 1.0).unwrap()).unwrap().0;
        let low = price_european(&p, &Grid1D::log_uniform(1.0, 5e-5, 1e4, 408, 400, 1.0).unwrap()).unwrap().0;
        assert!((wide / base - 1.0).abs() < 1e-3);
        assert!((low / base - 1.0).abs() < 1e-3);
        let fine = price_european(&p, &Grid1D::log_uniform(1.0, 1e-4, 1e4, 800, 800, 1.0).unwrap()).unwrap().0;
        assert!((fine / base - 1.0).abs() < 5e-3);
    }
}
