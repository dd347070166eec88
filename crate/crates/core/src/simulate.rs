//! Euler–Maruyama ensembles with local times, lifetimes and the
//! change-of-measure estimators built on recurrent transforms.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::Serialize;

use crate::coeffs::Coef;
use crate::diffusion::{DiffusionSpec, ScaleSpeed};
use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::potentials::ZeroPotential;
use crate::quad::Verdict;
use crate::stats::{mean_se, Estimate};
use crate::transforms::{recurrent_from_atom, Func, TransformSpec};

const CLOCK_STREAM_KEY: u64 = 0x9e37_79b9_7f4a_7c15;
const MAX_HALVINGS: u32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum LocalTimeScheme {
    Tanaka,
    /// σ²(y)/(2ε) × time spent in (y−ε, y+ε)
    Occupation { bandwidth: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub local_time: LocalTimeScheme,
    /// |x| at or beyond this counts as explosion; default 1e4·max(|x0|, 1)
    pub explosion_barrier: Option<f64>,
    /// states within this distance of an absorbing boundary are snapped onto it
    pub boundary_snap: f64,
    pub threads: Option<usize>,
    /// halve steps near singular boundaries (Brownian-bridge refinement)
    pub adaptive: bool,
    /// store every `stride`-th state of the first `paths` paths
    pub record: Option<(usize, usize)>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            n_paths: 10_000,
            seed: 1,
            local_time: LocalTimeScheme::Tanaka,
            explosion_barrier: None,
            boundary_snap: 0.0,
            threads: crate::exec::env_threads(),
            adaptive: true,
            record: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidParameter("n_paths must be at least 1".into()));
        }
        if let LocalTimeScheme::Occupation { bandwidth } = self.local_time {
            if !(bandwidth > 0.0) {
                return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {bandwidth}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryRule {
    Absorb,
    Reflect,
}

/// What to simulate: σ, drift, interval, boundary behaviour and an optional
/// continuous rate c₀ to integrate along the path.
#[derive(Clone)]
pub struct SimModel {
    sigma: Coef,
    drift: Coef,
    l: f64,
    r: f64,
    left: BoundaryRule,
    right: BoundaryRule,
    rate: Option<Func>,
}

impl SimModel {
    /// The base diffusion, absorbed at boundaries classified accessible.
    pub fn from_spec(spec: &DiffusionSpec, ss: &ScaleSpeed) -> SimModel {
        let rep = ss.classify();
        let (l, r) = spec.interval();
        let rule = |acc: Verdict, e: f64| {
            if e.is_finite() && acc != Verdict::No {
                BoundaryRule::Absorb
            } else {
                BoundaryRule::Reflect
            }
        };
        SimModel {
            sigma: spec.sigma_coef().clone(),
            drift: spec.drift_coef().clone(),
            l,
            r,
            left: rule(rep.left.accessible, l),
            right: rule(rep.right.accessible, r),
            rate: None,
        }
    }

    /// The transformed diffusion; it never reaches finite boundaries in
    /// continuous time, so discrete overshoots are reflected.
    pub fn from_transform(t: &TransformSpec) -> SimModel {
        let d = t.as_diffusion();
        let (l, r) = d.interval();
        SimModel {
            sigma: d.sigma_coef().clone(),
            drift: d.drift_coef().clone(),
            l,
            r,
            left: BoundaryRule::Reflect,
            right: BoundaryRule::Reflect,
            rate: None,
        }
    }

    pub fn with_rate(mut self, rate: Func) -> SimModel {
        self.rate = Some(rate);
        self
    }

    pub fn with_drift(mut self, drift: Coef) -> SimModel {
        self.drift = drift;
        self
    }

    pub fn with_boundaries(mut self, left: BoundaryRule, right: BoundaryRule) -> SimModel {
        self.left = left;
        self.right = right;
        self
    }

    /// Absorb on exiting (a, b) ⊂ (l, r).
    pub fn restricted(mut self, a: f64, b: f64) -> SimModel {
        self.l = a;
        self.r = b;
        self.left = BoundaryRule::Absorb;
        self.right = BoundaryRule::Absorb;
        self
    }

    fn dist(&self, x: f64) -> f64 {
        (x - self.l).min(self.r - x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PathStatus {
    Alive,
    Absorbed,
    Exploded,
    Flagged,
}

#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub horizon: f64,
    pub levels: Vec<f64>,
    pub terminal: Vec<f64>,
    pub status: Vec<PathStatus>,
    /// lifetime ζ; +∞ while alive at the horizon
    pub lifetime: Vec<f64>,
    /// row-major: local_time[i * levels.len() + j] = L^{y_j} of path i
    pub local_time: Vec<f64>,
    /// ∫₀^{T∧ζ} c₀(X_s) ds
    pub rate_integral: Vec<f64>,
    /// recorded (t, x, L…) rows per recorded path
    pub recorded: Vec<Vec<(f64, f64, Vec<f64>)>>,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.terminal.len()
    }

    pub fn local_times(&self, i: usize) -> &[f64] {
        let k = self.levels.len();
        &self.local_time[i * k..(i + 1) * k]
    }

    pub fn flagged(&self) -> usize {
        self.status.iter().filter(|s| **s == PathStatus::Flagged).count()
    }

    /// CSV dump: path_id, t, x, L_level…
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "path_id,t,x")?;
        for j in 0..self.levels.len() {
            write!(w, ",L_level{}", j + 1)?;
        }
        writeln!(w)?;
        for (i, rows) in self.recorded.iter().enumerate() {
            for (t, x, ls) in rows {
                write!(w, "{i},{t:.16e},{x:.16e}")?;
                for l in ls {
                    write!(w, ",{l:.16e}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

struct PathOut {
    x: f64,
    status: PathStatus,
    lifetime: f64,
    lt: Vec<f64>,
    rate: f64,
    rec: Vec<(f64, f64, Vec<f64>)>,
}

struct Stepper<'a> {
    m: &'a SimModel,
    levels: &'a [f64],
    occ: Option<(f64, Vec<f64>)>,
    barrier: f64,
    adaptive: bool,
}

enum StepEnd {
    Continue,
    Absorbed(f64),
    Exploded,
}

impl Stepper<'_> {
    /// One Euler step of length h driven by Brownian increment dw, refined by
    /// bridge sampling when the step is large compared to the distance to a
    /// finite boundary.
    fn step(
        &self,
        rng: &mut ChaCha8Rng,
        x: &mut f64,
        t: f64,
        h: f64,
        dw: f64,
        lt: &mut [f64],
        rate: &mut f64,
        depth: u32,
    ) -> std::result::Result<StepEnd, ()> {
        let s = self.m.sigma.eval(*x).map_err(|_| ())?;
        let b = self.m.drift.eval(*x).map_err(|_| ())?;
        if self.adaptive && depth < MAX_HALVINGS {
            let scale = self.m.dist(*x);
            if scale.is_finite() && ((b * h).abs() > 0.5 * scale || s * h.sqrt() > 0.25 * scale) {
                // W at h/2 given W(h) = dw
                let z: f64 = rng.sample(StandardNormal);
                let w1 = 0.5 * dw + 0.5 * h.sqrt() * z;
                match self.step(rng, x, t, 0.5 * h, w1, lt, rate, depth + 1)? {
                    StepEnd::Continue => {}
                    end => return Ok(end),
                }
                return self.step(rng, x, t + 0.5 * h, 0.5 * h, dw - w1, lt, rate, depth + 1);
            }
        }
        if let Some(c0) = &self.m.rate {
            *rate += c0(*x).map_err(|_| ())? * h;
        }
        let x0 = *x;
        let mut x1 = x0 + b * h + s * dw;
        let mut end = StepEnd::Continue;
        if x1 <= self.m.l {
            match self.m.left {
                BoundaryRule::Absorb => {
                    let frac = (x0 - self.m.l) / (x0 - x1);
                    end = StepEnd::Absorbed(t + frac * h);
                    x1 = self.m.l;
                }
                BoundaryRule::Reflect => x1 = reflect(self.m.l, self.m.r, x1),
            }
        } else if x1 >= self.m.r {
            match self.m.right {
                BoundaryRule::Absorb => {
                    let frac = (self.m.r - x0) / (x1 - x0);
                    end = StepEnd::Absorbed(t + frac * h);
                    x1 = self.m.r;
                }
                BoundaryRule::Reflect => x1 = reflect(self.m.l, self.m.r, x1),
            }
        }
        if !x1.is_finite() {
            return Err(());
        }
        match &self.occ {
            None => {
                for (l, &y) in lt.iter_mut().zip(self.levels) {
                    let sg = if x0 >= y { 1.0 } else { -1.0 };
                    *l += (x1 - y).abs() - (x0 - y).abs() - sg * (x1 - x0);
                }
            }
            Some((eps, s2)) => {
                for ((l, &y), &sy) in lt.iter_mut().zip(self.levels).zip(s2) {
                    if (x0 - y).abs() < *eps {
                        *l += sy / (2.0 * eps) * h;
                    }
                }
            }
        }
        *x = x1;
        if matches!(end, StepEnd::Continue) && x1.abs() >= self.barrier {
            end = StepEnd::Exploded;
        }
        Ok(end)
    }
}

fn reflect(l: f64, r: f64, x: f64) -> f64 {
    let y = if x <= l { 2.0 * l - x } else { 2.0 * r - x };
    if y > l && y < r {
        y
    } else if x <= l {
        // overshoot beyond the far side too; land just inside
        l + (r - l).min(1.0) * 1e-12 + l.abs() * f64::EPSILON
    } else {
        r - (r - l).min(1.0) * 1e-12 - r.abs() * f64::EPSILON
    }
}

/// Simulate `cfg.n_paths` Euler paths of `model` from `x0` to time `horizon`.
/// Path i uses stream i of ChaCha8 keyed by the seed, so results are
/// identical for any thread count.
pub fn euler_paths(model: &SimModel, x0: f64, horizon: f64, levels: &[f64], cfg: &SimConfig) -> Result<PathEnsemble> {
    cfg.validate()?;
    if !(model.l < x0 && x0 < model.r) {
        return Err(Error::Precondition(format!("x0 = {x0} is not interior")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon must be finite and >= 0, got {horizon}")));
    }
    let occ = match cfg.local_time {
        LocalTimeScheme::Tanaka => None,
        LocalTimeScheme::Occupation { bandwidth } => {
            let mut s2 = Vec::new();
            for &y in levels {
                let s = model.sigma.eval(y)?;
                s2.push(s * s);
            }
            Some((bandwidth, s2))
        }
    };
    let st = Stepper {
        m: model,
        levels,
        occ,
        barrier: cfg.explosion_barrier.unwrap_or(1e4 * x0.abs().max(1.0)),
        adaptive: cfg.adaptive,
    };
    let n_steps = (horizon / cfg.dt).round() as usize;
    let dt = if n_steps == 0 { 0.0 } else { horizon / n_steps as f64 };
    let sdt = dt.sqrt();
    let (rec_paths, stride) = cfg.record.unwrap_or((0, 1));
    let stride = stride.max(1);
    let outs = map_indexed(cfg.n_paths, cfg.threads, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let mut x = x0;
        let mut lt = vec![0.0; levels.len()];
        let mut rate = 0.0;
        let mut status = PathStatus::Alive;
        let mut lifetime = f64::INFINITY;
        let recording = i < rec_paths;
        let mut rec = Vec::new();
        if recording {
            rec.push((0.0, x, lt.clone()));
        }
        for k in 0..n_steps {
            let t = k as f64 * dt;
            let z: f64 = rng.sample(StandardNormal);
            match st.step(&mut rng, &mut x, t, dt, sdt * z, &mut lt, &mut rate, 0) {
                Ok(StepEnd::Continue) => {}
                Ok(StepEnd::Absorbed(tz)) => {
                    status = PathStatus::Absorbed;
                    lifetime = tz;
                }
                Ok(StepEnd::Exploded) => {
                    status = PathStatus::Exploded;
                    lifetime = t + dt;
                }
                Err(()) => {
                    status = PathStatus::Flagged;
                    lifetime = t;
                }
            }
            if recording && ((k + 1) % stride == 0 || status != PathStatus::Alive) {
                rec.push(((k + 1) as f64 * dt, x, lt.clone()));
            }
            if status != PathStatus::Alive {
                break;
            }
        }
        PathOut {
            x,
            status,
            lifetime,
            lt,
            rate,
            rec,
        }
    });
    let flagged = outs.iter().filter(|o| o.status == PathStatus::Flagged).count();
    if flagged * 100 > cfg.n_paths {
        return Err(Error::TooManyFlagged {
            flagged,
            total: cfg.n_paths,
        });
    }
    let mut ens = PathEnsemble {
        horizon,
        levels: levels.to_vec(),
        terminal: Vec::with_capacity(outs.len()),
        status: Vec::with_capacity(outs.len()),
        lifetime: Vec::with_capacity(outs.len()),
        local_time: Vec::with_capacity(outs.len() * levels.len()),
        rate_integral: Vec::with_capacity(outs.len()),
        recorded: Vec::new(),
    };
    for o in outs {
        ens.terminal.push(o.x);
        ens.status.push(o.status);
        ens.lifetime.push(o.lifetime);
        ens.local_time.extend_from_slice(&o.lt);
        ens.rate_integral.push(o.rate);
        if !o.rec.is_empty() {
            ens.recorded.push(o.rec);
        }
    }
    Ok(ens)
}

fn transform_model(t: &TransformSpec) -> SimModel {
    if t.rate_is_zero() {
        return SimModel::from_transform(t);
    }
    let t2 = t.clone();
    SimModel::from_transform(t).with_rate(Arc::new(move |x| t2.continuous_rate(x)))
}

fn charge_sites(t: &TransformSpec) -> Vec<f64> {
    t.charges().iter().map(|c| c.0).collect()
}

/// P^x(ζ > t) = u(x,y) E^{h,x}[exp(−s'(y)L^y_t/(2u(y,y))) / u(X_t,y)].
pub fn exit_survival(spec: &DiffusionSpec, ss: &Arc<ScaleSpeed>, x: f64, y: f64, t: f64, cfg: &SimConfig) -> Result<Estimate> {
    spec.check_interior("x", x)?;
    let tr = recurrent_from_atom(spec, ss, y)?;
    killed_expectation(&tr, x, t, |_| 1.0, cfg)
}

/// E^x[F(X_T) 1{T < ζ}] = h(x) E^{h,x}[F(X_T) / (h(X_T) M_T)].
pub fn killed_expectation(t: &TransformSpec, x: f64, horizon: f64, payoff: impl Fn(f64) -> f64 + Sync, cfg: &SimConfig) -> Result<Estimate> {
    let model = transform_model(t);
    let levels = charge_sites(t);
    let ens = euler_paths(&model, x, horizon, &levels, cfg)?;
    let hx = t.h(x)?;
    let mut vals = Vec::with_capacity(ens.n_paths());
    for i in 0..ens.n_paths() {
        if ens.status[i] == PathStatus::Flagged {
            continue;
        }
        let xt = ens.terminal[i];
        let ln_m = t.ln_m(ens.rate_integral[i], ens.local_times(i));
        vals.push(hx * payoff(xt) * (-ln_m).exp() / t.h(xt)?);
    }
    Ok(mean_se(vals))
}

/// Plain killed Euler estimate of E^x[F(X_T) 1{T < ζ}].
pub fn naive_killed_expectation(
    spec: &DiffusionSpec,
    ss: &ScaleSpeed,
    x: f64,
    horizon: f64,
    payoff: impl Fn(f64) -> f64,
    cfg: &SimConfig,
) -> Result<Estimate> {
    let cfg = SimConfig { adaptive: false, ..cfg.clone() };
    let ens = euler_paths(&SimModel::from_spec(spec, ss), x, horizon, &[], &cfg)?;
    Ok(mean_se(
        (0..ens.n_paths())
            .filter(|&i| ens.status[i] != PathStatus::Flagged)
            .map(|i| if ens.status[i] == PathStatus::Alive { payoff(ens.terminal[i]) } else { 0.0 }),
    ))
}

/// Sample mean of h(X_T)M_T/h(x) under the base law (should be 1).
pub fn base_martingale_check(spec: &DiffusionSpec, ss: &ScaleSpeed, t: &TransformSpec, x: f64, horizon: f64, cfg: &SimConfig) -> Result<Estimate> {
    let t2 = t.clone();
    let mut model = SimModel::from_spec(spec, ss);
    if !t.rate_is_zero() {
        model = model.with_rate(Arc::new(move |z| t2.continuous_rate(z)));
    }
    let levels = charge_sites(t);
    let ens = euler_paths(&model, x, horizon, &levels, cfg)?;
    let hx = t.h(x)?;
    let mut vals = Vec::with_capacity(ens.n_paths());
    for i in 0..ens.n_paths() {
        match ens.status[i] {
            PathStatus::Flagged => continue,
            PathStatus::Absorbed => vals.push(0.0),
            _ => {
                let ln_m = t.ln_m(ens.rate_integral[i], ens.local_times(i));
                vals.push(t.h(ens.terminal[i])? * ln_m.exp() / hx);
            }
        }
    }
    Ok(mean_se(vals))
}

#[derive(Debug, Clone)]
pub struct KillingSamples {
    pub alive: Vec<bool>,
    pub terminal: Vec<f64>,
    /// exp(−rate·L^y_T) per path
    pub survival_weight: Vec<f64>,
}

impl KillingSamples {
    pub fn survival_fraction(&self) -> Estimate {
        mean_se(self.alive.iter().map(|&a| if a { 1.0 } else { 0.0 }))
    }
}

/// Kill recurrent-transform paths when rate·L^y exceeds an independent Exp(1)
/// clock; survivors at T sample the Doob h-transform.
pub fn htransform_by_killing(t: &TransformSpec, x: f64, horizon: f64, cfg: &SimConfig) -> Result<KillingSamples> {
    let [(y, rate)] = t.charges() else {
        return Err(Error::Precondition("killing needs a single-charge atom transform".into()));
    };
    let ens = euler_paths(&transform_model(t), x, horizon, &[*y], cfg)?;
    let clocks = map_indexed(ens.n_paths(), Some(1), |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ CLOCK_STREAM_KEY);
        rng.set_stream(i as u64);
        rng.sample::<f64, _>(Exp1)
    });
    let mut out = KillingSamples {
        alive: Vec::new(),
        terminal: Vec::new(),
        survival_weight: Vec::new(),
    };
    for (i, e) in clocks.iter().enumerate() {
        if ens.status[i] == PathStatus::Flagged {
            continue;
        }
        let a = rate * ens.local_times(i)[0];
        out.alive.push(a <= *e);
        out.terminal.push(ens.terminal[i]);
        out.survival_weight.push((-a).exp());
    }
    Ok(out)
}

/// Fraction of paths reaching the explosion barrier by T.
pub fn explosion_fraction(t: &TransformSpec, x: f64, horizon: f64, cfg: &SimConfig) -> Result<Estimate> {
    let ens = euler_paths(&SimModel::from_transform(t), x, horizon, &[], cfg)?;
    Ok(mean_se(
        ens.status
            .iter()
            .filter(|s| **s != PathStatus::Flagged)
            .map(|s| if *s == PathStatus::Exploded { 1.0 } else { 0.0 }),
    ))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CouplingStats {
    /// fraction of (path, step) points with X^{y0} > X^{y1} + tol
    pub violation_fraction: f64,
    /// fraction of paths with X^{y0}_T ≤ X^{y1}_T + tol
    pub terminal_ordered: f64,
}

/// Shared-noise plain Euler for dX = σ dB + (σ²/X) 1{X ≤ y} dt at y0 and y1.
pub fn monotone_coupling_check(spec: &DiffusionSpec, x: f64, y0: f64, y1: f64, horizon: f64, cfg: &SimConfig) -> Result<CouplingStats> {
    cfg.validate()?;
    if !spec.is_natural_scale() || spec.interval() != (0.0, f64::INFINITY) {
        return Err(Error::Precondition("coupling check needs a driftless diffusion on (0, inf)".into()));
    }
    spec.check_interior("x", x)?;
    let tol = 1e-12;
    let n_steps = (horizon / cfg.dt).round().max(1.0) as usize;
    let dt = horizon / n_steps as f64;
    let per = map_indexed(cfg.n_paths, cfg.threads, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let (mut a, mut b) = (x, x);
        let mut bad = 0usize;
        let step = |z: f64, v: f64, y: f64| -> f64 {
            let s = spec.sigma(v).unwrap_or(f64::NAN);
            let drift = if v <= y { s * s / v } else { 0.0 };
            let n = v + drift * dt + s * dt.sqrt() * z;
            if n <= 0.0 {
                -n
            } else {
                n
            }
        };
        for _ in 0..n_steps {
            let z: f64 = rng.sample(StandardNormal);
            a = step(z, a, y0);
            b = step(z, b, y1);
            if a > b + tol {
                bad += 1;
            }
        }
        (bad, a <= b + tol)
    });
    let total = (cfg.n_paths * n_steps) as f64;
    Ok(CouplingStats {
        violation_fraction: per.iter().map(|p| p.0).sum::<usize>() as f64 / total,
        terminal_ordered: per.iter().filter(|p| p.1).count() as f64 / cfg.n_paths as f64,
    })
}

/// Drift of the monotone family: σ²(x)/x · 1{x ≤ y}.
pub fn monotone_family_drift(spec: &DiffusionSpec, y: f64) -> Coef {
    let s = spec.clone();
    Coef::native(format!("sigma^2/x*1(x<={y})"), move |x| {
        if x <= y {
            s.sigma(x).map(|v| v * v / x).unwrap_or(f64::NAN)
        } else {
            0.0
        }
    })
}

/// Total local time at y accumulated before absorption, one value per path.
pub fn total_local_time(spec: &DiffusionSpec, ss: &ScaleSpeed, x: f64, y: f64, horizon: f64, cfg: &SimConfig) -> Result<(Vec<f64>, usize)> {
    let ens = euler_paths(&SimModel::from_spec(spec, ss), x, horizon, &[y], cfg)?;
    let mut out = Vec::new();
    let mut unfinished = 0;
    for i in 0..ens.n_paths() {
        match ens.status[i] {
            PathStatus::Flagged => {}
            PathStatus::Alive => {
                unfinished += 1;
                out.push(ens.local_times(i)[0]);
            }
            _ => out.push(ens.local_times(i)[0]),
        }
    }
    Ok((out, unfinished))
}

/// Monte Carlo for the two-sided exit discounts of an α-atom transform at y:
/// E^{h,x}[1{T_a<T_b} e^{−L^y/(2u(y,y))}] and E^{h,x}[1{T_b<T_a} e^{−L^y/(2u(y,y))}].
pub fn exit_discount_mc(t: &TransformSpec, a: f64, b: f64, x: f64, horizon: f64, cfg: &SimConfig) -> Result<(Estimate, Estimate, usize)> {
    let [(y, _)] = t.charges() else {
        return Err(Error::Precondition("exit discount needs a single-atom transform".into()));
    };
    let c = 1.0 / (2.0 * t.h(*y)?);
    let model = SimModel::from_transform(t).restricted(a, b);
    let ens = euler_paths(&model, x, horizon, &[*y], cfg)?;
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    let mut unfinished = 0;
    for i in 0..ens.n_paths() {
        if ens.status[i] != PathStatus::Absorbed {
            unfinished += (ens.status[i] == PathStatus::Alive) as usize;
            continue;
        }
        let d = (-c * ens.local_times(i)[0]).exp();
        let at_a = ens.terminal[i] <= a;
        lo.push(if at_a { d } else { 0.0 });
        hi.push(if at_a { 0.0 } else { d });
    }
    Ok((mean_se(lo), mean_se(hi), unfinished))
}

/// Zero-potential kernel handle used by callers building estimators by hand.
pub fn zero_kernel(ss: &Arc<ScaleSpeed>) -> Result<ZeroPotential> {
    ZeroPotential::new(ss.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{expand_family, ModelFamily};

    fn cfg(n: usize, dt: f64) -> SimConfig {
        SimConfig {
            dt,
            n_paths: n,
            seed: 7,
            threads: Some(1),
            ..SimConfig::default()
        }
    }

    fn bm01() -> (DiffusionSpec, Arc<ScaleSpeed>) {
        let spec = DiffusionSpec::new("bm01", Coef::constant(1.0), Coef::constant(0.0), 0.0, 1.0).unwrap();
        let ss = Arc::new(ScaleSpeed::new(&spec).unwrap());
        (spec, ss)
    }

    #[test]
    fn driftless_mean_and_local_time() {
        let spec = expand_family(&ModelFamily::Brownian).unwrap();
        let ss = ScaleSpeed::new(&spec).unwrap();
        let m = SimModel::from_spec(&spec, &ss);
        let ens = euler_paths(&m, 0.0, 1.0, &[0.0], &cfg(20_000, 1e-3)).unwrap();
        let mean = mean_se(ens.terminal.iter().copied());
        assert!(mean.z(0.0) < 3.0);
        let lt = mean_se((0..ens.n_paths()).map(|i| ens.local_times(i)[0]));
        assert!(lt.z((2.0 / std::f64::consts::PI).sqrt()) < 3.0, "{lt:?}");
        // Tanaka identity holds exactly on each path for driftless steps
        let ens = euler_paths(&m, 0.3, 0.5, &[0.0], &SimConfig { record: Some((5, 1)), ..cfg(5, 1e-2) }).unwrap();
        for rows in &ens.recorded {
            let mut int = 0.0;
            for w in rows.windows(2) {
                let sg = if w[0].1 >= 0.0 { 1.0 } else { -1.0 };
                int += sg * (w[1].1 - w[0].1);
            }
            let last = rows.last().unwrap();
            assert!((last.2[0] + int - (last.1.abs() - 0.3)).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_across_threads() {
        let (spec, ss) = bm01();
        let t = recurrent_from_atom(&spec, &ss, 0.5).unwrap();
        let m = SimModel::from_transform(&t);
        let a = euler_paths(&m, 0.5, 0.2, &[0.5], &SimConfig { threads: Some(1), ..cfg(300, 1e-3) }).unwrap();
        let b = euler_paths(&m, 0.5, 0.2, &[0.5], &SimConfig { threads: Some(3), ..cfg(300, 1e-3) }).unwrap();
        assert_eq!(a.terminal.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.terminal.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.local_time, b.local_time);
    }

    #[test]
    fn survival_small_time_and_monotone() {
        let (spec, ss) = bm01();
        let e = exit_survival(&spec, &ss, 0.5, 0.5, 1e-4, &cfg(2000, 1e-5)).unwrap();
        assert!(e.value >= 0.999, "{e:?}");
        let early = exit_survival(&spec, &ss, 0.5, 0.5, 0.25, &cfg(4000, 1e-3)).unwrap();
        let late = exit_survival(&spec, &ss, 0.5, 0.5, 1.0, &cfg(4000, 1e-3)).unwrap();
        assert!(early.value - late.value > 5.0 * (early.se.powi(2) + late.se.powi(2)).sqrt());
    }

    #[test]
    fn killing_identity() {
        let (spec, ss) = bm01();
        let t = recurrent_from_atom(&spec, &ss, 0.5).unwrap();
        let k = htransform_by_killing(&t, 0.5, 0.3, &cfg(20_000, 1e-3)).unwrap();
        let frac = k.survival_fraction();
        let w = mean_se(k.survival_weight.iter().copied());
        assert!((frac.value - w.value).abs() < 3.0 * frac.se);
    }

    #[test]
    fn occupation_local_time() {
        let spec = expand_family(&ModelFamily::Brownian).unwrap();
        let ss = ScaleSpeed::new(&spec).unwrap();
        let m = SimModel::from_spec(&spec, &ss);
        let c = SimConfig {
            local_time: LocalTimeScheme::Occupation { bandwidth: 0.05 },
            ..cfg(20_000, 1e-3)
        };
        let ens = euler_paths(&m, 0.0, 1.0, &[0.0], &c).unwrap();
        let lt = mean_se((0..ens.n_paths()).map(|i| ens.local_times(i)[0]));
        assert!((lt.value / (2.0 / std::f64::consts::PI).sqrt() - 1.0).abs() < 0.05);
        assert!(SimConfig { local_time: LocalTimeScheme::Occupation { bandwidth: 0.0 }, ..c }.validate().is_err());
    }

    #[test]
    fn coupling_identical_levels() {
        let g = expand_family(&ModelFamily::Gbm(0.3)).unwrap();
        let s = monotone_coupling_check(&g, 1.0, 1.5, 1.5, 0.5, &cfg(200, 1e-3)).unwrap();
        assert_eq!(s.violation_fraction, 0.0);
        assert_eq!(s.terminal_ordered, 1.0);
    }

    #[test]
    fn flagged_paths_abort() {
        let spec = DiffusionSpec::new("bad", Coef::parse("1").unwrap(), Coef::parse("1/(x-0.5)").unwrap(), 0.0, 1.0).unwrap();
        let m = SimModel {
            sigma: spec.sigma_coef().clone(),
            drift: spec.drift_coef().clone(),
            l: 0.0,
            r: 1.0,
            left: BoundaryRule::Absorb,
            right: BoundaryRule::Absorb,
            rate: None,
        };
        assert!(matches!(euler_paths(&m, 0.5, 0.1, &[], &cfg(100, 1e-3)), Err(Error::TooManyFlagged { .. })));
    }
}
