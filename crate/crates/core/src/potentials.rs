//! Potential densities, α-potentials via fundamental solutions, hitting-time
//! transforms and local-time laws.

use std::sync::Arc;

use serde::Serialize;

use crate::diffusion::{DiffusionSpec, Limit, ScaleSpeed, Side};
use crate::error::{Error, Result};
use crate::quad::{integrate, truncations, Verdict};

const LN_RESCALE: f64 = 230.258_509_299_404_6; // ln 1e100

#[derive(Debug, Clone, Copy)]
struct Node {
    x: f64,
    f: f64,
    g: f64,
    ell: f64,
    df: f64,
    dg: f64,
    dell: f64,
    // ln of the common scale factor of f and g
    e: f64,
}

/// One fundamental solution tabulated on the accepted RK steps.
#[derive(Debug, Clone)]
struct Branch {
    nodes: Vec<Node>,
}

fn hermite(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> f64 {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0
        + (t3 - 2.0 * t2 + t) * h * d0
        + (-2.0 * t3 + 3.0 * t2) * y1
        + (t3 - t2) * h * d1
}

#[derive(Debug, Clone, Copy)]
struct Eval {
    lnf: f64,
    // g/f = f'/(f s')
    q: f64,
    ell: f64,
}

impl Branch {
    fn range(&self) -> (f64, f64) {
        (self.nodes[0].x, self.nodes[self.nodes.len() - 1].x)
    }

    /// (g/f, ℓ) without the logarithm.
    fn eval_q(&self, x: f64) -> (f64, f64) {
        let n = &self.nodes;
        let last = n.len() - 1;
        if x <= n[0].x || x >= n[last].x {
            let e = self.eval(x);
            return (e.q, e.ell);
        }
        let i = n.partition_point(|nd| nd.x <= x) - 1;
        let (a, b) = (&n[i], &n[i + 1]);
        let r = (b.e - a.e).exp();
        let f = hermite(a.x, b.x, a.f, b.f * r, a.df, b.df * r, x);
        let g = hermite(a.x, b.x, a.g, b.g * r, a.dg, b.dg * r, x);
        let ell = hermite(a.x, b.x, a.ell, b.ell, a.dell, b.dell, x);
        (g / f, ell)
    }

    fn eval(&self, x: f64) -> Eval {
        let n = &self.nodes;
        let last = n.len() - 1;
        if x <= n[0].x || x >= n[last].x {
            // log-linear extrapolation from the end node
            let a = if x <= n[0].x { &n[0] } else { &n[last] };
            let q = a.g / a.f;
            let slope = q * a.ell.exp();
            return Eval {
                lnf: a.e + a.f.ln() + slope * (x - a.x),
                q,
                ell: a.ell + a.dell * (x - a.x),
            };
        }
        let i = n.partition_point(|nd| nd.x <= x) - 1;
        let (a, b) = (&n[i], &n[i + 1]);
        let r = (b.e - a.e).exp();
        let f = hermite(a.x, b.x, a.f, b.f * r, a.df, b.df * r, x);
        let g = hermite(a.x, b.x, a.g, b.g * r, a.dg, b.dg * r, x);
        let ell = hermite(a.x, b.x, a.ell, b.ell, a.dell, b.dell, x);
        Eval {
            lnf: a.e + f.ln(),
            q: g / f,
            ell,
        }
    }
}

/// How the shooting solution was pinned at an endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum BoundaryCondition {
    /// f = 0 at the (accessible) endpoint itself.
    AbsorbingAtEndpoint,
    /// f = |s(e) − s(a)| at a truncation point a of an accessible endpoint.
    Absorbing { truncation: f64 },
    /// f' = 0 at a truncation point of an inaccessible endpoint (minimal solution).
    Reflecting { truncation: f64 },
    /// Accessibility was inconclusive; the minimal solution was assumed.
    ReflectingAssumed { truncation: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct FpDiagnostics {
    pub left: BoundaryCondition,
    pub right: BoundaryCondition,
    pub rk_steps: usize,
    /// max relative deviation of the Wronskian over interior probes
    pub wronskian_spread: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct FpOptions {
    pub rtol: f64,
    /// relative change of the anchor log-derivative below which truncation stops
    pub trunc_tol: f64,
}

impl Default for FpOptions {
    fn default() -> Self {
        FpOptions {
            rtol: 1e-11,
            trunc_tol: 1e-9,
        }
    }
}

/// ψ_α increasing, φ_α decreasing solutions of 𝔸f = αf with ψ(c) = φ(c) = 1.
#[derive(Debug, Clone)]
pub struct FundamentalPair {
    alpha: f64,
    anchor: f64,
    spec: DiffusionSpec,
    psi: Branch,
    phi: Branch,
    ln_w: f64,
    pub diagnostics: FpDiagnostics,
}

struct Shooter<'a> {
    spec: &'a DiffusionSpec,
    alpha: f64,
    natural: bool,
    rtol: f64,
}

type State = [f64; 3];

impl Shooter<'_> {
    fn rhs(&self, x: f64, y: &State) -> Result<State> {
        let s = self.spec.sigma(x)?;
        let b = if self.natural { 0.0 } else { self.spec.drift(x)? };
        let s2 = s * s;
        let sp = y[2].exp();
        Ok([y[1] * sp, self.alpha * y[0] * 2.0 / (sp * s2), -2.0 * b / s2])
    }

    /// Dormand–Prince 5(4) from `x0` to `x1`; returns the accepted nodes.
    fn run(&self, x0: f64, x1: f64, y0: State, e0: f64, steps: &mut usize) -> Result<Vec<Node>> {
        const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
        const A: [[f64; 6]; 7] = [
            [0.0; 6],
            [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
            [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
            [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
            [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
            [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
            [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
        ];
        const E: [f64; 7] = [
            71.0 / 57600.0,
            0.0,
            -71.0 / 16695.0,
            71.0 / 1920.0,
            -17253.0 / 339200.0,
            22.0 / 525.0,
            -1.0 / 40.0,
        ];
        let dir = (x1 - x0).signum();
        let span = (x1 - x0).abs();
        let mut x = x0;
        let mut y = y0;
        let mut e = e0;
        let mut k1 = self.rhs(x, &y)?;
        let node = |x: f64, y: &State, k: &State, e: f64| Node {
            x,
            f: y[0],
            g: y[1],
            ell: y[2],
            df: k[0],
            dg: k[1],
            dell: k[2],
            e,
        };
        let mut out = vec![node(x, &y, &k1, e)];
        let scale = x0.abs().max(x1.abs()).max(1.0);
        let mut h = (1e-4 * span).min(1e-3 * (x0.abs().max(1e-3)));
        let hmax = span / 16.0;
        let mut fails = 0;
        while (x1 - x) * dir > 0.0 {
            if *steps > 2_000_000 {
                return Err(Error::Solver(format!("step budget exhausted at x = {x}")));
            }
            h = h.min(hmax).min((x1 - x).abs());
            let hs = h * dir;
            let mut k = [[0.0; 3]; 7];
            k[0] = k1;
            let mut bad = false;
            for s in 1..7 {
                let mut yt = y;
                for (j, kj) in k.iter().enumerate().take(s) {
                    for c in 0..3 {
                        yt[c] += hs * A[s][j] * kj[c];
                    }
                }
                match self.rhs(x + C[s] * hs, &yt) {
                    Ok(v) if v.iter().all(|t| t.is_finite()) => k[s] = v,
                    _ => {
                        bad = true;
                        break;
                    }
                }
            }
            let mut yn = y;
            let mut err: f64 = 0.0;
            if !bad {
                for c in 0..3 {
                    let mut inc = 0.0;
                    let mut er = 0.0;
                    for s in 0..7 {
                        inc += A[6][s.min(5)] * k[s][c] * if s < 6 { 1.0 } else { 0.0 };
                        er += E[s] * k[s][c];
                    }
                    yn[c] = y[c] + hs * inc;
                    let sc = if c == 2 {
                        self.rtol * (1.0 + y[2].abs().max(yn[2].abs()) * 1e-3)
                    } else {
                        self.rtol * y[c].abs().max(yn[c].abs()) + 1e-300
                    };
                    err = err.max((hs * er).abs() / sc);
                }
                bad = !yn.iter().all(|t| t.is_finite()) || !err.is_finite();
            }
            if bad {
                h *= 0.25;
                fails += 1;
                if fails > 60 || h < 1e-15 * scale {
                    return Err(Error::Solver(format!(
                        "step failure near x = {x} (α = {}, f = {}, g = {})",
                        self.alpha, y[0], y[1]
                    )));
                }
                continue;
            }
            if err <= 1.0 {
                fails = 0;
                *steps += 1;
                x = if (x1 - (x + hs)) * dir <= 0.0 { x1 } else { x + hs };
                y = yn;
                k1 = k[6];
                if y[0].abs() > 1e100 || (y[0].abs() < 1e-100 && y[0] != 0.0) {
                    let shift = if y[0].abs() > 1e100 { LN_RESCALE } else { -LN_RESCALE };
                    let r = (-shift).exp();
                    y[0] *= r;
                    y[1] *= r;
                    k1[0] *= r;
                    k1[1] *= r;
                    e += shift;
                }
                out.push(node(x, &y, &k1, e));
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h *= fac;
            } else {
                h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            }
        }
        Ok(out)
    }
}

fn branch_from(mut nodes: Vec<Node>, anchor: f64) -> Branch {
    if nodes[0].x > nodes[nodes.len() - 1].x {
        nodes.reverse();
    }
    let br = Branch { nodes };
    let c = br.eval(anchor).lnf;
    let mut nodes = br.nodes;
    for n in &mut nodes {
        n.e -= c;
    }
    Branch { nodes }
}

pub fn fundamental_solutions(spec: &DiffusionSpec, ss: &ScaleSpeed, alpha: f64) -> Result<FundamentalPair> {
    FundamentalPair::new(spec, ss, alpha, FpOptions::default())
}

impl FundamentalPair {
    pub fn new(spec: &DiffusionSpec, ss: &ScaleSpeed, alpha: f64, opts: FpOptions) -> Result<FundamentalPair> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        let (l, r) = spec.interval();
        let c = ss.anchor();
        let rep = ss.classify();
        let sh = Shooter {
            spec,
            alpha,
            natural: spec.is_natural_scale(),
            rtol: opts.rtol,
        };
        let mut steps = 0;

        // start state at (or near) an endpoint
        let start = |side: Side, p: Option<f64>| -> Result<(f64, State, BoundaryCondition)> {
            let (ep, end) = match side {
                Side::Left => (&rep.left, l),
                Side::Right => (&rep.right, r),
            };
            let sgn = if side == Side::Left { 1.0 } else { -1.0 };
            let accessible = ep.accessible;
            match p {
                None => {
                    let ell = ss.ln_s_prime(end)?;
                    Ok((end, [0.0, sgn, ell], BoundaryCondition::AbsorbingAtEndpoint))
                }
                Some(a) => {
                    let ell = ss.ln_s_prime(a)?;
                    match accessible {
                        Verdict::Yes => Ok((
                            a,
                            [ss.s_to_limit(a, side)?, sgn, ell],
                            BoundaryCondition::Absorbing { truncation: a },
                        )),
                        Verdict::No => Ok((a, [1.0, 0.0, ell], BoundaryCondition::Reflecting { truncation: a })),
                        Verdict::Inconclusive => Ok((
                            a,
                            [1.0, 0.0, ell],
                            BoundaryCondition::ReflectingAssumed { truncation: a },
                        )),
                    }
                }
            }
        };
        let endpoint_ok = |side: Side| -> bool {
            let (ep, end) = match side {
                Side::Left => (&rep.left, l),
                Side::Right => (&rep.right, r),
            };
            ep.accessible == Verdict::Yes
                && end.is_finite()
                && matches!(spec.sigma(end), Ok(s) if s > 0.0)
                && (spec.is_natural_scale() || spec.drift(end).is_ok())
                && ss.ln_s_prime(end).map(f64::is_finite).unwrap_or(false)
        };

        // choose truncations: push until the anchor log-derivative settles
        let mut pick = |side: Side| -> Result<(f64, State, BoundaryCondition)> {
            let end = if side == Side::Left { l } else { r };
            if endpoint_ok(side) {
                return start(side, None);
            }
            let mut prev_q: Option<f64> = None;
            let mut last = None;
            for (k, a) in truncations(c, end).enumerate().take(40) {
                if k == 0 && end.is_finite() {
                    continue;
                }
                let (x0, y0, bc) = start(side, Some(a))?;
                let nodes = sh.run(x0, c, y0, 0.0, &mut steps)?;
                let n = nodes[nodes.len() - 1];
                let q = n.g / n.f;
                last = Some((x0, y0, bc));
                if let Some(pq) = prev_q {
                    if (q - pq).abs() <= opts.trunc_tol * q.abs().max(1e-300) {
                        break;
                    }
                }
                prev_q = Some(q);
            }
            last.ok_or_else(|| Error::Solver("no admissible truncation point".into()))
        };
        let (xa, ya, left_bc) = pick(Side::Left)?;
        let (xb, yb, right_bc) = pick(Side::Right)?;

        let mut psi_nodes = sh.run(xa, c, ya, 0.0, &mut steps)?;
        let mid = *psi_nodes.last().unwrap();
        let tail = sh.run(c, xb, [mid.f, mid.g, mid.ell], mid.e, &mut steps)?;
        psi_nodes.extend_from_slice(&tail[1..]);
        let mut phi_nodes = sh.run(xb, c, yb, 0.0, &mut steps)?;
        let mid = *phi_nodes.last().unwrap();
        let tail = sh.run(c, xa, [mid.f, mid.g, mid.ell], mid.e, &mut steps)?;
        phi_nodes.extend_from_slice(&tail[1..]);
        let psi = branch_from(psi_nodes, c);
        let phi = branch_from(phi_nodes, c);

        let (p, q) = (psi.eval(c), phi.eval(c));
        let wq = q_diff(p.q, q.q);
        if !(wq > 0.0) {
            return Err(Error::Solver(format!("non-positive Wronskian {wq} at the anchor")));
        }
        let ln_w = wq.ln();
        let mut fp = FundamentalPair {
            alpha,
            anchor: c,
            spec: spec.clone(),
            psi,
            phi,
            ln_w,
            diagnostics: FpDiagnostics {
                left: left_bc,
                right: right_bc,
                rk_steps: steps,
                wronskian_spread: 0.0,
            },
        };
        let w = fp.wronskian();
        let (lo, hi) = fp.table_range();
        let spread = (1..10)
            .map(|i| {
                let t = i as f64 / 10.0;
                let x = if lo > 0.0 && hi / lo > 1e3 { lo.powf(1.0 - t) * hi.powf(t) } else { lo + t * (hi - lo) };
                // stay well inside the truncation so contamination is negligible
                let x = 0.5 * (x + c);
                (fp.wronskian_at(x) / w - 1.0).abs()
            })
            .fold(0.0, f64::max);
        fp.diagnostics.wronskian_spread = spread;
        Ok(fp)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn spec(&self) -> &DiffusionSpec {
        &self.spec
    }

    /// w = (ψ'φ − ψφ')/s', constant in x.
    pub fn wronskian(&self) -> f64 {
        self.ln_w.exp()
    }

    pub fn ln_wronskian(&self) -> f64 {
        self.ln_w
    }

    /// The Wronskian recomputed pointwise (for constancy checks).
    pub fn wronskian_at(&self, x: f64) -> f64 {
        let (p, q) = (self.psi.eval(x), self.phi.eval(x));
        // (ψ'φ − ψφ')/s' = ψφ (q_ψ − q_φ)
        (p.lnf + q.lnf).exp() * q_diff(p.q, q.q)
    }

    /// Interval covered by the tabulated solutions.
    pub fn table_range(&self) -> (f64, f64) {
        self.psi.range()
    }

    pub fn ln_psi(&self, x: f64) -> f64 {
        self.psi.eval(x).lnf
    }

    pub fn ln_phi(&self, x: f64) -> f64 {
        self.phi.eval(x).lnf
    }

    pub fn psi(&self, x: f64) -> f64 {
        self.ln_psi(x).exp()
    }

    pub fn phi(&self, x: f64) -> f64 {
        self.ln_phi(x).exp()
    }

    pub fn s_prime(&self, x: f64) -> f64 {
        self.psi.eval(x).ell.exp()
    }

    pub fn ln_s_prime(&self, x: f64) -> f64 {
        self.psi.eval(x).ell
    }

    /// ψ'/ψ.
    pub fn psi_log_derivative(&self, x: f64) -> f64 {
        let (q, ell) = self.psi.eval_q(x);
        q * ell.exp()
    }

    /// φ'/φ.
    pub fn phi_log_derivative(&self, x: f64) -> f64 {
        let (q, ell) = self.phi.eval_q(x);
        q * ell.exp()
    }

    pub fn psi_prime(&self, x: f64) -> f64 {
        self.psi(x) * self.psi_log_derivative(x)
    }

    pub fn phi_prime(&self, x: f64) -> f64 {
        self.phi(x) * self.phi_log_derivative(x)
    }

    pub fn m_density(&self, x: f64) -> Result<f64> {
        let s = self.spec.sigma(x)?;
        Ok(2.0 / (self.s_prime(x) * s * s))
    }

    pub fn ln_u(&self, x: f64, y: f64) -> f64 {
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        self.ln_psi(a) + self.ln_phi(b) - self.ln_w
    }

    /// u^α(x, y) = ψ(x∧y) φ(x∨y) / w.
    pub fn u(&self, x: f64, y: f64) -> f64 {
        self.ln_u(x, y).exp()
    }

    /// ∂ₓ log u^α(x, y), left derivative (ψ branch for x ≤ y).
    pub fn dlog_u(&self, x: f64, y: f64) -> f64 {
        if x <= y {
            self.psi_log_derivative(x)
        } else {
            self.phi_log_derivative(x)
        }
    }

    /// Density of the α-resolvent with respect to Lebesgue measure, u^α(x,y) m'(y).
    pub fn resolvent_density(&self, x: f64, y: f64) -> Result<f64> {
        Ok(self.u(x, y) * self.m_density(y)?)
    }
}

// q_ψ − q_φ where q_φ < 0 < q_ψ
fn q_diff(a: f64, b: f64) -> f64 {
    a - b
}

pub fn alpha_potential(fp: &FundamentalPair, x: f64, y: f64) -> f64 {
    fp.u(x, y)
}

/// E^x[exp(−α T_y)].
pub fn hitting_laplace(fp: &FundamentalPair, x: f64, y: f64) -> f64 {
    if x == y {
        return 1.0;
    }
    (fp.ln_u(x, y) - fp.ln_u(y, y)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Transience {
    Both,
    LeftOnly,
    RightOnly,
}

/// u(x,y) for a transient diffusion, from the normalized scale function.
#[derive(Debug, Clone)]
pub struct ZeroPotential {
    ss: Arc<ScaleSpeed>,
    case: Transience,
}

impl ZeroPotential {
    pub fn new(ss: Arc<ScaleSpeed>) -> Result<ZeroPotential> {
        let case = match (ss.left_limit(), ss.right_limit()) {
            (Limit::Finite(_), Limit::Finite(_)) => Transience::Both,
            (Limit::Finite(_), Limit::PlusInfinity) => Transience::LeftOnly,
            (Limit::MinusInfinity, Limit::Finite(_)) => Transience::RightOnly,
            (Limit::MinusInfinity, Limit::PlusInfinity) => return Err(Error::Recurrent),
            (Limit::Inconclusive, _) => return Err(Error::InconclusiveLimit(ss.spec().interval().0)),
            _ => return Err(Error::InconclusiveLimit(ss.spec().interval().1)),
        };
        Ok(ZeroPotential { ss, case })
    }

    pub fn scale(&self) -> &Arc<ScaleSpeed> {
        &self.ss
    }

    // s(x) − s(l) and s(r) − s(x) in the normalized scale (s(l)=0, s(r)=1)
    fn lower(&self, x: f64) -> Result<f64> {
        match self.case {
            Transience::RightOnly => Ok(1.0),
            _ => self.ss.s_to_limit(x, Side::Left),
        }
    }

    fn upper(&self, x: f64) -> Result<f64> {
        match self.case {
            Transience::LeftOnly => Ok(1.0),
            _ => self.ss.s_to_limit(x, Side::Right),
        }
    }

    pub fn u(&self, x: f64, y: f64) -> Result<f64> {
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        Ok(self.lower(a)? * self.upper(b)?)
    }

    /// ∂ₓ log u(x, y), left derivative (x ≤ y uses the lower branch).
    pub fn dlog_u(&self, x: f64, y: f64) -> Result<f64> {
        let sp = self.ss.s_prime(x)?;
        if x <= y {
            Ok(match self.case {
                Transience::RightOnly => 0.0,
                _ => sp / self.lower(x)?,
            })
        } else {
            Ok(match self.case {
                Transience::LeftOnly => 0.0,
                _ => -sp / self.upper(x)?,
            })
        }
    }

    pub fn u_x(&self, x: f64, y: f64) -> Result<f64> {
        Ok(self.u(x, y)? * self.dlog_u(x, y)?)
    }
}

pub fn potential_density(ss: &Arc<ScaleSpeed>, x: f64, y: f64) -> Result<f64> {
    ss.spec().check_interior("x", x)?;
    ss.spec().check_interior("y", y)?;
    ZeroPotential::new(ss.clone())?.u(x, y)
}

/// u or u^α behind one interface.
#[derive(Debug, Clone)]
pub enum PotentialKernel {
    Zero(ZeroPotential),
    Alpha(Arc<FundamentalPair>),
}

impl PotentialKernel {
    pub fn u(&self, x: f64, y: f64) -> Result<f64> {
        match self {
            PotentialKernel::Zero(z) => z.u(x, y),
            PotentialKernel::Alpha(fp) => Ok(fp.u(x, y)),
        }
    }

    pub fn dlog_u(&self, x: f64, y: f64) -> Result<f64> {
        match self {
            PotentialKernel::Zero(z) => z.dlog_u(x, y),
            PotentialKernel::Alpha(fp) => Ok(fp.dlog_u(x, y)),
        }
    }

    pub fn s_prime(&self, x: f64) -> Result<f64> {
        match self {
            PotentialKernel::Zero(z) => z.ss.s_prime(x),
            PotentialKernel::Alpha(fp) => Ok(fp.s_prime(x)),
        }
    }
}

/// Exponential rate of the total local time L^y_∞ under P^y: s'(y)/(2u(y,y)).
pub fn local_time_total_law(kernel: &PotentialKernel, y: f64) -> Result<f64> {
    if let PotentialKernel::Alpha(_) = kernel {
        return Err(Error::Precondition(
            "the total local-time law needs the 0-potential of a transient diffusion".into(),
        ));
    }
    Ok(kernel.s_prime(y)? / (2.0 * kernel.u(y, y)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitSide {
    /// E[1{T_a < T_b} ...], requires y ≤ x
    Lower,
    /// E[1{T_b < T_a} ...], requires y ≥ x
    Upper,
}

/// E^{h,x}[1{T_side first} exp(−L^y_{T}/(2u^λ(y,y)))] for the α-atom transform
/// h = u^λ(·,y) started at x, exiting (a, b).
pub fn two_sided_exit_discount(fp: &FundamentalPair, a: f64, b: f64, x: f64, y: f64, side: ExitSide) -> Result<f64> {
    let spec = fp.spec();
    if !(spec.contains(a) && spec.contains(b) && a < b && a < y && y < b && a <= x && x <= b) {
        return Err(Error::Precondition(format!(
            "need l < a < y < b < r and x in [a, b]; got a={a}, b={b}, x={x}, y={y}"
        )));
    }
    match side {
        ExitSide::Lower if y > x => {
            return Err(Error::Precondition(format!("lower branch needs y <= x (y={y}, x={x})")))
        }
        ExitSide::Upper if y < x => {
            return Err(Error::Precondition(format!("upper branch needs y >= x (y={y}, x={x})")))
        }
        _ => {}
    }
    let sh = |z: f64| transformed_scale_alpha(fp, y, z);
    let sh_prime = |z: f64| fp.s_prime(z) / fp.u(z, y).powi(2);
    let (sa, sb, sx) = (sh(a), sh(b), sh(x));
    let uyy = fp.u(y, y);
    match side {
        ExitSide::Lower => {
            if x == a {
                return Ok(1.0);
            }
            if x == b {
                return Ok(0.0);
            }
            let prob = (sb - sx) / (sb - sa);
            let i = integrate(|z| sh_prime(z) / (sb - sh(z)).powi(2), a, y, 1e-11)?;
            Ok(prob / (1.0 + i * sb * sb * uyy))
        }
        ExitSide::Upper => {
            if x == b {
                return Ok(1.0);
            }
            if x == a {
                return Ok(0.0);
            }
            let prob = (sx - sa) / (sb - sa);
            let i = integrate(|z| sh_prime(z) / (sh(z) - sa).powi(2), y, b, 1e-11)?;
            Ok(prob / (1.0 + i * sa * sa * uyy))
        }
    }
}

/// s_h(x) = ∫_y^x s'/u^α(·,y)² in closed form through ψ/φ.
pub fn transformed_scale_alpha(fp: &FundamentalPair, y: f64, x: f64) -> f64 {
    let w = fp.wronskian();
    if x >= y {
        // (w/ψ(y)²)(ψ/φ(x) − ψ/φ(y))
        let r = (fp.ln_psi(x) - fp.ln_phi(x) - fp.ln_psi(y) + fp.ln_phi(y)).exp_m1();
        w * (-fp.ln_psi(y) - fp.ln_phi(y)).exp() * r
    } else {
        // −(w/φ(y)²)(φ/ψ(x) − φ/ψ(y))
        let r = (fp.ln_phi(x) - fp.ln_psi(x) - fp.ln_phi(y) + fp.ln_psi(y)).exp_m1();
        -w * (-fp.ln_psi(y) - fp.ln_phi(y)).exp() * r
    }
}
