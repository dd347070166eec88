//! Perpetual optimal stopping V(x) = sup_τ E^x[e^{−λτ} g(X_τ)] through the
//! composed transform: V = Φ·G(s̃) with G the smallest concave majorant of
//! ĝ = g/Φ on the s̃-axis.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::coeffs::Coef;
use crate::diffusion::{BoundaryClass, DiffusionSpec, Limit, ScaleSpeed, Side};
use crate::error::{Error, Result};
use crate::potentials::{BoundaryCondition, FundamentalPair};
use crate::quad::{bisect, truncations};

pub const DEFAULT_NODES: usize = 4001;
const PUSHES: usize = 40;
const GROWTH: f64 = 1.5;
const RUN: usize = 6;

#[derive(Debug, Clone)]
pub struct StoppingProblem {
    pub spec: DiffusionSpec,
    pub g: Coef,
    pub lambda: f64,
    pub y: f64,
    pub nodes: usize,
}

impl StoppingProblem {
    pub fn new(spec: &DiffusionSpec, g: Coef, lambda: f64, y: Option<f64>) -> Result<StoppingProblem> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
        }
        let y = y.unwrap_or_else(|| spec.default_anchor());
        spec.check_interior("y", y)?;
        let (l, r) = spec.interval();
        let probes = std::iter::once(y)
            .chain(truncations(y, l).take(8))
            .chain(truncations(y, r).take(8));
        // probes where g overflows are skipped; only the sign is checked here
        for x in probes {
            let Ok(v) = g.eval(x) else { continue };
            if !(v >= 0.0) {
                return Err(Error::Precondition(format!("payoff must be >= 0; g({x}) = {v}")));
            }
        }
        Ok(StoppingProblem {
            spec: spec.clone(),
            g,
            lambda,
            y,
            nodes: DEFAULT_NODES,
        })
    }

    pub fn with_nodes(mut self, nodes: usize) -> Result<StoppingProblem> {
        if nodes < 11 {
            return Err(Error::InvalidParameter(format!("need at least 11 nodes, got {nodes}")));
        }
        self.nodes = nodes;
        Ok(self)
    }

    pub fn scaled(&self, k: f64) -> StoppingProblem {
        let g = self.g.clone();
        let mut p = self.clone();
        p.g = Coef::native(format!("{k}*({})", self.g.label()), move |x| k * g.eval(x).unwrap_or(f64::NAN));
        p
    }
}

/// Y = s(X) and back.
#[derive(Clone, Debug)]
pub struct NaturalMap {
    ss: Option<Arc<ScaleSpeed>>,
}

impl NaturalMap {
    pub fn is_identity(&self) -> bool {
        self.ss.is_none()
    }

    pub fn to_natural(&self, x: f64) -> Result<f64> {
        match &self.ss {
            None => Ok(x),
            Some(ss) => ss.s(x),
        }
    }

    pub fn to_original(&self, v: f64) -> Result<f64> {
        match &self.ss {
            None => Ok(v),
            Some(ss) => ss.inverse(v),
        }
    }
}

/// Rewrite the problem in Y = s(X): σ_Y = (s'σ)∘s⁻¹, payoff g∘s⁻¹.
pub fn to_natural_scale(spec: &DiffusionSpec, ss: &Arc<ScaleSpeed>, g: &Coef) -> Result<(DiffusionSpec, Coef, NaturalMap)> {
    if spec.is_natural_scale() {
        return Ok((spec.clone(), g.clone(), NaturalMap { ss: None }));
    }
    let end = |lim: Limit| match lim {
        Limit::Finite(v) => Ok(v),
        Limit::PlusInfinity => Ok(f64::INFINITY),
        Limit::MinusInfinity => Ok(f64::NEG_INFINITY),
        Limit::Inconclusive => Err(Error::Precondition("scale limit is inconclusive; natural-scale interval unknown".into())),
    };
    let (yl, yr) = (end(ss.left_limit())?, end(ss.right_limit())?);
    let s1 = ss.clone();
    let sigma = Coef::native(format!("natural({})", spec.sigma_coef().label()), move |v| {
        let Ok(x) = s1.inverse(v) else { return f64::NAN };
        match (s1.s_prime(x), s1.spec().sigma(x)) {
            (Ok(sp), Ok(s)) => sp * s,
            _ => f64::NAN,
        }
    });
    let s2 = ss.clone();
    let g2 = g.clone();
    let payoff = Coef::native(format!("({})∘s^-1", g.label()), move |v| match s2.inverse(v) {
        Ok(x) => g2.eval(x).unwrap_or(f64::NAN),
        Err(_) => f64::NAN,
    });
    let y_spec = DiffusionSpec::new(format!("{}@natural", spec.name()), sigma, Coef::constant(0.0), yl, yr)?;
    Ok((y_spec, payoff, NaturalMap { ss: Some(ss.clone()) }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Finiteness {
    Finite,
    Infinite,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct FinitenessReport {
    pub verdict: Finiteness,
    /// the diverging endpoint, when infinite
    pub witness: Option<Side>,
    /// (z, ln[g/Φ](z)) along the push sequence toward each endpoint
    pub left_sequence: Vec<(f64, f64)>,
    pub right_sequence: Vec<(f64, f64)>,
}

/// Φ(x) = (ψ(x)φ(y) + φ(x)ψ(y)) / 2w, in logs.
fn ln_phi_weight(fp: &FundamentalPair, y: f64, x: f64) -> f64 {
    let a = fp.ln_psi(x) + fp.ln_phi(y);
    let b = fp.ln_phi(x) + fp.ln_psi(y);
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln() - std::f64::consts::LN_2 - fp.ln_wronskian()
}

fn logit_scale(fp: &FundamentalPair, y: f64, x: f64) -> f64 {
    fp.ln_psi(x) + fp.ln_phi(y) - fp.ln_phi(x) - fp.ln_psi(y)
}

/// Halving-distance pushes toward a finite endpoint, doubling toward an infinite one,
/// kept inside the tabulated range.
fn pushes(y: f64, end: f64, range: (f64, f64)) -> Vec<f64> {
    let (lo, hi) = range;
    let sgn = if end > y { 1.0 } else { -1.0 };
    let mut out = Vec::new();
    for k in 0..PUSHES {
        let p = if end.is_finite() {
            end - (end - y) * 0.5f64.powi(k as i32 + 1)
        } else {
            y + sgn * 0.25 * y.abs().max(1.0) * 2f64.powi(k as i32)
        };
        if !(p > lo && p < hi) || p == end || out.last() == Some(&p) {
            break;
        }
        out.push(p);
    }
    out
}

fn ln_ratio(problem: &StoppingProblem, fp: &FundamentalPair, x: f64) -> f64 {
    match problem.g.eval(x) {
        Ok(g) if g > 0.0 => g.ln() - ln_phi_weight(fp, problem.y, x),
        Ok(_) => f64::NEG_INFINITY,
        Err(_) => f64::NAN,
    }
}

enum Trend {
    Bounded,
    Growing,
    Unclear,
}

fn trend(seq: &[(f64, f64)]) -> Trend {
    let vals: Vec<f64> = seq.iter().map(|p| p.1).collect();
    if vals.iter().any(|v| v.is_nan()) || vals.len() < 3 {
        return Trend::Unclear;
    }
    let mut run = 0;
    for w in vals.windows(2) {
        if w[1] - w[0] >= GROWTH.ln() {
            run += 1;
            if run >= RUN {
                return Trend::Growing;
            }
        } else {
            run = 0;
        }
    }
    let split = vals.len() - 3;
    let head = vals[..split].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tail = vals[split..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let rising = vals[split..].windows(2).all(|w| w[1] > w[0] + 1e-12);
    // bounded: the tail stays within a factor 2 of the earlier maximum and is not still climbing past it
    if tail == f64::NEG_INFINITY || (tail <= head + std::f64::consts::LN_2 && !(rising && tail > head)) {
        Trend::Bounded
    } else {
        Trend::Unclear
    }
}

/// Is g/Φ bounded toward both endpoints?
pub fn check_finiteness(problem: &StoppingProblem, fp: &FundamentalPair) -> FinitenessReport {
    let (l, r) = problem.spec.interval();
    let range = table_range(fp, problem);
    let seq = |end: f64| -> Vec<(f64, f64)> {
        pushes(problem.y, end, range)
            .into_iter()
            .map(|x| (x, ln_ratio(problem, fp, x)))
            .take_while(|p| !p.1.is_nan())
            .collect()
    };
    let left_sequence = seq(l);
    let right_sequence = seq(r);
    let (tl, tr) = (trend(&left_sequence), trend(&right_sequence));
    let (verdict, witness) = match (&tl, &tr) {
        (Trend::Growing, _) => (Finiteness::Infinite, Some(Side::Left)),
        (_, Trend::Growing) => (Finiteness::Infinite, Some(Side::Right)),
        (Trend::Bounded, Trend::Bounded) => (Finiteness::Finite, None),
        _ => (Finiteness::Inconclusive, None),
    };
    FinitenessReport {
        verdict,
        witness,
        left_sequence,
        right_sequence,
    }
}

/// Tabulated range, widened to the endpoint when the solutions start there.
fn table_range(fp: &FundamentalPair, problem: &StoppingProblem) -> (f64, f64) {
    let (mut lo, mut hi) = fp.table_range();
    let (l, r) = problem.spec.interval();
    if fp.diagnostics.left == BoundaryCondition::AbsorbingAtEndpoint {
        lo = l;
    }
    if fp.diagnostics.right == BoundaryCondition::AbsorbingAtEndpoint {
        hi = r;
    }
    (lo, hi)
}

/// Piecewise-linear concave function through its knots.
#[derive(Debug, Clone, Serialize)]
pub struct Majorant {
    pub knots: Vec<(f64, f64)>,
}

impl Majorant {
    pub fn eval(&self, z: f64) -> f64 {
        let k = &self.knots;
        if z <= k[0].0 {
            return k[0].1;
        }
        if z >= k[k.len() - 1].0 {
            return k[k.len() - 1].1;
        }
        let i = k.partition_point(|p| p.0 <= z) - 1;
        let (a, b) = (k[i], k[i + 1]);
        a.1 + (b.1 - a.1) * (z - a.0) / (b.0 - a.0)
    }
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Upper concave envelope (monotone chain) of the points; `left_limit` and
/// `right_limit`, when given, are placed at z = 0 and z = 1.
pub fn concave_majorant(points: &[(f64, f64)], left_limit: Option<f64>, right_limit: Option<f64>) -> Result<Majorant> {
    let mut all = Vec::with_capacity(points.len() + 2);
    if let Some(v) = left_limit {
        all.push((0.0, v));
    }
    all.extend(points.iter().copied().filter(|p| p.1.is_finite()));
    if let Some(v) = right_limit {
        all.push((1.0, v));
    }
    if all.len() < 2 {
        return Err(Error::InvalidParameter("majorant needs at least 2 points".into()));
    }
    if all.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::InvalidParameter("majorant abscissae must be strictly increasing".into()));
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(all.len());
    for p in all {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) >= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    Ok(Majorant { knots: hull })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMethod {
    /// g(e)/Φ(e) at an endpoint where the fundamental solutions are pinned
    Exact,
    /// extrapolated from the outermost grid nodes; low confidence at an entrance
    /// boundary whose last five nodes spread by more than 1%
    Extrapolated { low_confidence: bool },
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundaryValue {
    pub value: f64,
    pub method: BoundaryMethod,
}

#[derive(Debug, Clone, Serialize)]
pub struct StoppingSolution {
    pub lambda: f64,
    pub anchor: f64,
    /// grid in original coordinates
    pub xs: Vec<f64>,
    pub s_tilde: Vec<f64>,
    pub phi: Vec<f64>,
    pub g_hat: Vec<f64>,
    pub majorant: Vec<f64>,
    pub value: Vec<f64>,
    pub in_region: Vec<bool>,
    pub knots: Majorant,
    /// stopping region as closed intervals in original coordinates
    pub region: Vec<(f64, f64)>,
    pub boundary: (BoundaryValue, BoundaryValue),
    pub finiteness: FinitenessReport,
    /// finiteness inconclusive or low-confidence boundary value
    pub flagged: bool,
    #[serde(skip)]
    fp: Option<Arc<FundamentalPair>>,
}

impl StoppingSolution {
    pub fn is_infinite(&self) -> bool {
        self.finiteness.verdict == Finiteness::Infinite
    }

    /// V at an arbitrary state (original coordinates).
    pub fn value_at(&self, x: f64) -> Result<f64> {
        if self.is_infinite() {
            return Ok(f64::INFINITY);
        }
        let fp = self.fp.as_ref().unwrap();
        fp.spec().check_interior("x", x)?;
        let z = 1.0 / (1.0 + (-logit_scale(fp, self.anchor, x)).exp());
        Ok(ln_phi_weight(fp, self.anchor, x).exp() * self.knots.eval(z))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,s_tilde,g_hat,G,V,in_gamma")?;
        for i in 0..self.xs.len() {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                self.xs[i], self.s_tilde[i], self.g_hat[i], self.majorant[i], self.value[i], self.in_region[i] as u8
            )?;
        }
        Ok(())
    }
}

/// Solve in the problem's own coordinates. Φ and s̃ are built from ψ, φ and
/// the Wronskian, which do not depend on the choice of scale, so this agrees
/// with solving the natural-scale image from [`to_natural_scale`].
pub fn solve(problem: &StoppingProblem) -> Result<StoppingSolution> {
    let ss = ScaleSpeed::new(&problem.spec)?;
    let fp = Arc::new(FundamentalPair::new(&problem.spec, &ss, problem.lambda, Default::default())?);
    solve_with(problem, &ss, fp)
}

/// Solve with precomputed scale/speed and pair for the same diffusion and λ.
pub fn solve_with(problem: &StoppingProblem, ss: &ScaleSpeed, fp: Arc<FundamentalPair>) -> Result<StoppingSolution> {
    if fp.alpha() != problem.lambda {
        return Err(Error::InvalidParameter("pair was built for a different rate".into()));
    }
    let y = problem.y;
    let finiteness = check_finiteness(problem, &fp);
    let (lo, hi) = table_range(&fp, problem);
    let (l, r) = problem.spec.interval();
    let n = problem.nodes;

    // nodes uniform in z = s̃(x) ∈ (0,1), inverted by bisection on the logit
    let log_axis = lo > 0.0 && hi.is_finite() && hi / lo > 1e3;
    let (a, b) = if log_axis { (lo.ln(), hi.ln()) } else { (lo, hi) };
    let shrink = |t: f64| a + (b - a) * t;
    let (a, b) = (shrink(1e-12), shrink(1.0 - 1e-12));
    let to_x = |u: f64| if log_axis { u.exp() } else { u };
    let logit_at = |u: f64| logit_scale(&fp, y, to_x(u));
    let mut xs = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    for i in 1..n - 1 {
        let z = i as f64 / (n - 1) as f64;
        let t = (z / (1.0 - z)).ln();
        if let Ok(u) = bisect(logit_at, a, b, t) {
            let x = to_x(u);
            if x > l && x < r {
                xs.push(x);
                zs.push(z);
            }
        }
    }
    if xs.len() < 5 {
        return Err(Error::Solver("too few grid nodes could be placed on the s~ axis".into()));
    }
    let ln_phis: Vec<f64> = xs.iter().map(|&x| ln_phi_weight(&fp, y, x)).collect();
    let mut g_hat = Vec::with_capacity(xs.len());
    for (x, lp) in xs.iter().zip(&ln_phis) {
        let g = problem.g.eval(*x)?;
        g_hat.push(if g == 0.0 { 0.0 } else { (g.ln() - lp).exp() });
    }

    let classes = [ss.boundary_class(Side::Left), ss.boundary_class(Side::Right)];
    let boundary = |side: Side| -> BoundaryValue {
        let (bc, end) = match side {
            Side::Left => (fp.diagnostics.left, l),
            Side::Right => (fp.diagnostics.right, r),
        };
        if bc == BoundaryCondition::AbsorbingAtEndpoint {
            if let Ok(g) = problem.g.eval(end) {
                // ψ(l) = 0 (resp. φ(r) = 0), so Φ(e) = φ(e)ψ(y)/2w (resp. ψ(e)φ(y)/2w)
                let ln_phi_e = ln_phi_weight(&fp, y, end);
                if ln_phi_e.is_finite() && g.is_finite() {
                    let value = if g == 0.0 { 0.0 } else { (g.ln() - ln_phi_e).exp() };
                    return BoundaryValue {
                        value,
                        method: BoundaryMethod::Exact,
                    };
                }
            }
        }
        let k = g_hat.len();
        let (idx, z_end) = match side {
            Side::Left => ([0, 1, 2, 3, 4], 0.0),
            Side::Right => ([k - 1, k - 2, k - 3, k - 4, k - 5], 1.0),
        };
        let last: Vec<f64> = idx.iter().map(|&i| g_hat[i]).collect();
        let max = last.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = last.iter().cloned().fold(f64::INFINITY, f64::min);
        // linear extrapolation from the two outermost nodes; g ≥ 0 bounds it below
        let (z0, z1) = (zs[idx[0]], zs[idx[1]]);
        let value = (last[0] + (last[0] - last[1]) * (z_end - z0) / (z0 - z1)).max(0.0);
        BoundaryValue {
            value,
            method: BoundaryMethod::Extrapolated {
                low_confidence: classes[side as usize] == BoundaryClass::Entrance && max > 0.0 && (max - min) / max > 0.01,
            },
        }
    };
    let bounds = (boundary(Side::Left), boundary(Side::Right));
    let low_conf = [&bounds.0, &bounds.1]
        .iter()
        .any(|b| matches!(b.method, BoundaryMethod::Extrapolated { low_confidence: true }));

    if finiteness.verdict == Finiteness::Infinite {
        let k = xs.len();
        let xs_out = xs.clone();
        return Ok(StoppingSolution {
            lambda: problem.lambda,
            anchor: y,
            xs: xs_out,
            s_tilde: zs,
            phi: ln_phis.iter().map(|v| v.exp()).collect(),
            g_hat,
            majorant: vec![f64::INFINITY; k],
            value: vec![f64::INFINITY; k],
            in_region: vec![false; k],
            knots: Majorant { knots: Vec::new() },
            region: Vec::new(),
            boundary: bounds,
            finiteness,
            flagged: false,
            fp: Some(fp),
        });
    }

    let pts: Vec<(f64, f64)> = zs.iter().copied().zip(g_hat.iter().copied()).collect();
    let maj = concave_majorant(&pts, Some(bounds.0.value), Some(bounds.1.value))?;
    let big = maj.knots.iter().map(|k| k.1).fold(0.0, f64::max);
    let tol = 1e-9 * big;
    let majorant: Vec<f64> = zs.iter().map(|&z| maj.eval(z)).collect();
    let in_region: Vec<bool> = g_hat.iter().zip(&majorant).map(|(g, m)| *g >= m - tol).collect();
    let value: Vec<f64> = ln_phis.iter().zip(&majorant).map(|(lp, m)| lp.exp() * m).collect();

    let xs_out = xs.clone();
    let mut region = Vec::new();
    let mut i = 0;
    while i < xs_out.len() {
        if !in_region[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < xs_out.len() && in_region[i + 1] {
            i += 1;
        }
        let mut lo_x = xs_out[start];
        let mut hi_x = xs_out[i];
        if start == 0 && bounds.0.value >= maj.eval(0.0) - tol {
            lo_x = l;
        }
        if i + 1 == xs_out.len() && bounds.1.value >= maj.eval(1.0) - tol {
            hi_x = r;
        }
        region.push((lo_x, hi_x));
        i += 1;
    }
    let flagged = finiteness.verdict == Finiteness::Inconclusive || low_conf;
    Ok(StoppingSolution {
        lambda: problem.lambda,
        anchor: y,
        xs: xs_out,
        s_tilde: zs,
        phi: ln_phis.iter().map(|v| v.exp()).collect(),
        g_hat,
        majorant,
        value,
        in_region,
        knots: maj,
        region,
        boundary: bounds,
        finiteness,
        flagged,
        fp: Some(fp),
    })
}
