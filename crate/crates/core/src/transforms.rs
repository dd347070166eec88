//! Path transformations: h-transforms with multiplicative functionals that
//! turn transient diffusions recurrent (and back).

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::coeffs::Coef;
use crate::diffusion::{DiffusionSpec, Limit, ScaleSpeed, Side};
use crate::error::{Error, Result};
use crate::potentials::{transformed_scale_alpha, FundamentalPair, PotentialKernel, ZeroPotential};
use crate::quad::{improper, integrate, integrate_any, Verdict};

pub type Func = Arc<dyn Fn(f64) -> Result<f64> + Send + Sync>;

/// Finitely many atoms with positive weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasureSpec {
    atoms: Vec<(f64, f64)>,
}

impl MeasureSpec {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<MeasureSpec> {
        if atoms.is_empty() {
            return Err(Error::InvalidParameter("measure has no atoms".into()));
        }
        if let Some(&(y, w)) = atoms.iter().find(|(y, w)| !(y.is_finite() && *w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter(format!("bad atom ({y}, {w})")));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("weights sum to {total}, not 1")));
        }
        Ok(MeasureSpec { atoms })
    }

    pub fn dirac(y: f64) -> MeasureSpec {
        MeasureSpec { atoms: vec![(y, 1.0)] }
    }

    /// Equal weights on the given points.
    pub fn uniform(points: &[f64]) -> Result<MeasureSpec> {
        let w = 1.0 / points.len() as f64;
        MeasureSpec::new(points.iter().map(|&y| (y, w)).collect())
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    fn check(&self, spec: &DiffusionSpec) -> Result<()> {
        for &(y, _) in &self.atoms {
            spec.check_interior("atom", y)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformKind {
    AtomPotential,
    MeasurePotential,
    DensityPotential,
    AlphaAtom,
    AlphaMeasure,
    Transient,
    ComposedOs,
    HLimit,
    GenericH,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Recurrent,
    PositiveRecurrent,
    Transient,
}

/// Drift-modified diffusion plus the functional M relating its law to the base:
/// dP^h/dP = h(X_t) M_t / h(x) on F_t, with
/// M_t = exp(∫c₀(X_s)ds + Σ rate_i L^{y_i}_t).
#[derive(Clone)]
pub struct TransformSpec {
    kind: TransformKind,
    base: DiffusionSpec,
    transformed: DiffusionSpec,
    h: Func,
    dlog_h: Func,
    continuous_rate: Func,
    charges: Vec<(f64, f64)>,
    s_h: Func,
    s_h_anchor: f64,
    target: Target,
    alpha: Option<f64>,
    /// (s_h(l+) = −∞, s_h(r−) = +∞) verdicts for recurrent kinds
    pub divergence: Option<(Verdict, Verdict)>,
    /// explosion of the transformed process (h-limit only)
    pub explodes: Option<Verdict>,
}

impl fmt::Debug for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransformSpec")
            .field("kind", &self.kind)
            .field("base", &self.base.name())
            .field("charges", &self.charges)
            .field("target", &self.target)
            .field("divergence", &self.divergence)
            .finish()
    }
}

impl TransformSpec {
    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn base(&self) -> &DiffusionSpec {
        &self.base
    }

    /// The transformed law as a diffusion, itself transformable.
    pub fn as_diffusion(&self) -> &DiffusionSpec {
        &self.transformed
    }

    pub fn h(&self, x: f64) -> Result<f64> {
        (self.h)(x)
    }

    /// h'/h (left derivative).
    pub fn dlog_h(&self, x: f64) -> Result<f64> {
        (self.dlog_h)(x)
    }

    pub fn h_prime(&self, x: f64) -> Result<f64> {
        Ok(self.h(x)? * self.dlog_h(x)?)
    }

    pub fn drift(&self, x: f64) -> Result<f64> {
        Ok(self.transformed.drift(x)?)
    }

    /// True when c₀ ≡ 0, so simulations can skip the rate integral.
    pub fn rate_is_zero(&self) -> bool {
        matches!(self.kind, TransformKind::AtomPotential | TransformKind::MeasurePotential | TransformKind::Transient | TransformKind::HLimit)
    }

    pub fn continuous_rate(&self, x: f64) -> Result<f64> {
        (self.continuous_rate)(x)
    }

    pub fn charges(&self) -> &[(f64, f64)] {
        &self.charges
    }

    /// Transformed scale function (s̃ for transient kinds).
    pub fn s_h(&self, x: f64) -> Result<f64> {
        (self.s_h)(x)
    }

    pub fn s_h_anchor(&self) -> f64 {
        self.s_h_anchor
    }

    pub fn target(&self) -> Target {
        self.target
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    /// ln(h(X_T)/h(x)) contributions are handled by callers; this is
    /// ln M_T given ∫c₀ and the local times at the charge sites.
    pub fn ln_m(&self, rate_integral: f64, local_times: &[f64]) -> f64 {
        rate_integral + self.charges.iter().zip(local_times).map(|(c, l)| c.1 * l).sum::<f64>()
    }
}

fn nan_on_err(f: &Func) -> impl Fn(f64) -> f64 + Send + Sync + 'static {
    let f = f.clone();
    move |x| f(x).unwrap_or(f64::NAN)
}

/// b + σ² h'/h as a native coefficient.
fn extended_drift(base: &DiffusionSpec, dlog_h: &Func, label: String) -> DiffusionSpec {
    let b = base.clone();
    let d = nan_on_err(dlog_h);
    let drift = Coef::native(label.clone(), move |x| {
        let (Ok(s), Ok(bx)) = (b.sigma(x), b.drift(x)) else {
            return f64::NAN;
        };
        bx + s * s * d(x)
    });
    base.with_drift(label, drift)
}

/// Verdicts for ∫ s'/h² diverging toward each end, from `from`.
fn divergence(s_prime: &Func, h: &Func, spec: &DiffusionSpec, from: f64) -> (Verdict, Verdict) {
    let (l, r) = spec.interval();
    let f = |z: f64| match (s_prime(z), h(z)) {
        (Ok(sp), Ok(hv)) => sp / (hv * hv),
        _ => f64::NAN,
    };
    (improper(f, from, l).diverges(), improper(f, from, r).diverges())
}

fn zero(_: f64) -> Result<f64> {
    Ok(0.0)
}

fn numeric_scale(s_prime: Func, h: Func, anchor: f64) -> Func {
    Arc::new(move |x: f64| {
        let mut bad = None;
        let v = integrate(
            |z| match (s_prime(z), h(z)) {
                (Ok(sp), Ok(hv)) => sp / (hv * hv),
                (Err(e), _) | (_, Err(e)) => {
                    bad.get_or_insert(e);
                    f64::NAN
                }
            },
            anchor,
            x,
            1e-10,
        );
        match bad {
            Some(e) => Err(e),
            None => v,
        }
    })
}

fn scale_prime(ss: &Arc<ScaleSpeed>) -> Func {
    let ss = ss.clone();
    Arc::new(move |x| ss.s_prime(x))
}

/// Σ wᵢ k(x, yᵢ) and its log-derivative.
fn mixture(kernel: PotentialKernel, mu: &MeasureSpec) -> (Func, Func) {
    let atoms = mu.atoms.clone();
    let k2 = kernel.clone();
    let a2 = atoms.clone();
    let h: Func = Arc::new(move |x| atoms.iter().map(|&(y, w)| Ok(w * kernel.u(x, y)?)).sum());
    if let [(y, _)] = a2[..] {
        return (h, Arc::new(move |x| k2.dlog_u(x, y)));
    }
    let dlog: Func = Arc::new(move |x| {
        let mut num = 0.0;
        let mut den = 0.0;
        for &(y, w) in &a2 {
            let u = k2.u(x, y)?;
            num += w * u * k2.dlog_u(x, y)?;
            den += w * u;
        }
        Ok(num / den)
    });
    (h, dlog)
}

fn require_transient(ss: &ScaleSpeed) -> Result<()> {
    match ss.is_transient() {
        Verdict::Yes => Ok(()),
        Verdict::No => Err(Error::Recurrent),
        Verdict::Inconclusive => Err(Error::InconclusiveLimit(match ss.left_limit() {
            Limit::Inconclusive => ss.spec().interval().0,
            _ => ss.spec().interval().1,
        })),
    }
}

pub fn recurrent_from_atom(spec: &DiffusionSpec, ss: &Arc<ScaleSpeed>, y: f64) -> Result<TransformSpec> {
    spec.check_interior("y", y)?;
    recurrent_from_measure(spec, ss, &MeasureSpec::dirac(y)).map(|mut t| {
        t.kind = TransformKind::AtomPotential;
        t
    })
}

pub fn recurrent_from_measure(spec: &DiffusionSpec, ss: &Arc<ScaleSpeed>, mu: &MeasureSpec) -> Result<TransformSpec> {
    require_transient(ss)?;
    mu.check(spec)?;
    let zp = ZeroPotential::new(ss.clone())?;
    let (h, dlog_h) = mixture(PotentialKernel::Zero(zp), mu);
    let mut charges = Vec::new();
    for &(y, w) in &mu.atoms {
        charges.push((y, w * ss.s_prime(y)? / (2.0 * h(y)?)));
    }
    let sp = scale_prime(ss);
    let anchor = ss.anchor();
    let div = divergence(&sp, &h, spec, anchor);
    Ok(TransformSpec {
        kind: TransformKind::MeasurePotential,
        base: spec.clone(),
        transformed: extended_drift(spec, &dlog_h, format!("{}^h(potential)", spec.name())),
        s_h: numeric_scale(sp, h.clone(), anchor),
        h,
        dlog_h,
        continuous_rate: Arc::new(zero),
        charges,
        s_h_anchor: anchor,
        target: Target::Recurrent,
        alpha: None,
        divergence: Some(div),
        explodes: None,
    })
}

/// h = ∫u(·,y) f(y) m(dy), tabulated; M has continuous rate f/h.
/// Bounded intervals with both scale limits finite only.
pub fn recurrent_from_density(spec: &DiffusionSpec, ss: &Arc<ScaleSpeed>, f: Coef, nodes: usize) -> Result<TransformSpec> {
    require_transient(ss)?;
    let (l, r) = spec.interval();
    if !(l.is_finite() && r.is_finite()) || !(ss.left_limit().is_finite() && ss.right_limit().is_finite()) {
        return Err(Error::Precondition("density measures need a bounded interval with finite scale".into()));
    }
    let n = nodes.max(16);
    let xs: Vec<f64> = (0..=n).map(|i| l + (r - l) * i as f64 / n as f64).collect();
    let lower = |x: f64| ss.s_to_limit(x, Side::Left);
    let upper = |x: f64| ss.s_to_limit(x, Side::Right);
    let mut err = None;
    let mut g = |z: f64, w: &dyn Fn(f64) -> Result<f64>| -> f64 {
        let v = (|| Ok::<f64, Error>(f.eval(z)? * ss.m_density(z)? * w(z)?))();
        v.unwrap_or_else(|e| {
            err.get_or_insert(e);
            f64::NAN
        })
    };
    // A(x) = ∫_l^x s f m', B(x) = ∫_x^r (1−s) f m'
    let mut a = vec![0.0; n + 1];
    let mut b = vec![0.0; n + 1];
    for i in 0..n {
        a[i + 1] = a[i] + integrate(|z| g(z, &lower), xs[i], xs[i + 1], 1e-10)?;
    }
    for i in (0..n).rev() {
        b[i] = b[i + 1] + integrate(|z| g(z, &upper), xs[i], xs[i + 1], 1e-10)?;
    }
    if let Some(e) = err {
        return Err(e);
    }
    let mut hv = vec![0.0; n + 1];
    let mut hp = vec![0.0; n + 1];
    for i in 1..n {
        let (lo, up) = (lower(xs[i])?, upper(xs[i])?);
        hv[i] = up * a[i] + lo * b[i];
        hp[i] = ss.s_prime(xs[i])? * (b[i] - a[i]);
    }
    hp[0] = ss.s_prime(xs[0]).unwrap_or(hp[1]) * b[0];
    hp[n] = -ss.s_prime(xs[n]).unwrap_or(-hp[n - 1]) * a[n];
    let (xs, hv, hp) = (Arc::new(xs), Arc::new(hv), Arc::new(hp));
    let table = move |x: f64, deriv: bool| -> Result<f64> {
        if !(x > xs[0] && x < xs[n]) {
            return Err(Error::Precondition(format!("{x} outside the tabulated interval")));
        }
        let i = (((x - xs[0]) / (xs[1] - xs[0])) as usize).min(n - 1);
        let (x0, x1) = (xs[i], xs[i + 1]);
        let hh = x1 - x0;
        let t = (x - x0) / hh;
        if deriv {
            let (t2, _) = (t * t, ());
            Ok((6.0 * t2 - 6.0 * t) / hh * hv[i]
                + (3.0 * t2 - 4.0 * t + 1.0) * hp[i]
                + (-6.0 * t2 + 6.0 * t) / hh * hv[i + 1]
                + (3.0 * t2 - 2.0 * t) * hp[i + 1])
        } else {
            let (t2, t3) = (t * t, t * t * t);
            Ok((2.0 * t3 - 3.0 * t2 + 1.0) * hv[i]
                + (t3 - 2.0 * t2 + t) * hh * hp[i]
                + (-2.0 * t3 + 3.0 * t2) * hv[i + 1]
                + (t3 - t2) * hh * hp[i + 1])
        }
    };
    let table = Arc::new(table);
    let t1 = table.clone();
    let h: Func = Arc::new(move |x| t1(x, false));
    let t2 = table.clone();
    let dlog_h: Func = Arc::new(move |x| Ok(t2(x, true)? / t2(x, false)?));
    let h2 = h.clone();
    let fc = f.clone();
    let rate: Func = Arc::new(move |x| Ok(fc.eval(x)? / h2(x)?));
    let sp = scale_prime(ss);
    let anchor = ss.anchor();
    let div = divergence(&sp, &h, spec, anchor);
    Ok(TransformSpec {
        kind: TransformKind::DensityPotential,
        base: spec.clone(),
        transformed: extended_drift(spec, &dlog_h, format!("{}^h(density)", spec.name())),
        s_h: numeric_scale(sp, h.clone(), anchor),
        h,
        dlog_h,
        continuous_rate: rate,
        charges: Vec::new(),
        s_h_anchor: anchor,
        target: Target::Recurrent,
        alpha: None,
        divergence: Some(div),
        explodes: None,
    })
}

pub fn recurrent_alpha_atom(spec: &DiffusionSpec, ss: &Arc<ScaleSpeed>, fp: &Arc<FundamentalPair>, y: f64) -> Result<TransformSpec> {
    spec.check_interior("y", y)?;
    let mut t = recurrent_alpha_measure(spec, ss, fp, &MeasureSpec::dirac(y))?;
    t.kind = TransformKind::AlphaAtom;
    // closed-form scale, anchored at the atom
    let fp2 = fp.clone();
    t.s_h = Arc::new(move |x| Ok(transformed_scale_alpha(&fp2, y, x)));
    t.s_h_anchor = y;
    Ok(t)
}

pub fn recurrent_alpha_measure(
    spec: &DiffusionSpec,
    ss: &Arc<ScaleSpeed>,
    fp: &Arc<FundamentalPair>,
    mu: &MeasureSpec,
) -> Result<TransformSpec> {
    mu.check(spec)?;
    let alpha = fp.alpha();
    let (h, dlog_h) = mixture(PotentialKernel::Alpha(fp.clone()), mu);
    let mut charges = Vec::new();
    for &(y, w) in &mu.atoms {
        charges.push((y, w * fp.s_prime(y) / (2.0 * h(y)?)));
    }
    let fp2 = fp.clone();
    let sp: Func = Arc::new(move |x| Ok(fp2.s_prime(x)));
    let anchor = mu.atoms[0].0;
    let div = divergence(&sp, &h, spec, anchor);
    let _ = ss;
    Ok(TransformSpec {
        kind: TransformKind::AlphaMeasure,
        base: spec.clone(),
        transformed: extended_drift(spec, &dlog_h, format!("{}^h(alpha={alpha})", spec.name())),
        s_h: numeric_scale(sp, h.clone(), anchor),
        h,
        dlog_h,
        continuous_rate: Arc::new(move |_| Ok(-alpha)),
        charges,
        s_h_anchor: anchor,
        target: Target::PositiveRecurrent,
        alpha: Some(alpha),
        divergence: Some(div),
        explodes: None,
    })
}

/// h with caller-supplied derivatives and singular part n = Σ nᵢ δ_{yᵢ} of h''.
pub fn generic_recurrent(
    spec: &DiffusionSpec,
    ss: &Arc<ScaleSpeed>,
    h: Coef,
    h_prime: Coef,
    h_second: Coef,
    charges: &[(f64, f64)],
) -> Result<TransformSpec> {
    let probes = probe_grid(spec);
    for &x in &probes {
        let v = h.eval(x)?;
        if !(v > 0.0) {
            return Err(Error::NotRecurrentTransform(format!("h({x}) = {v} is not positive")));
        }
    }
    let (hc, hpc) = (h.clone(), h_prime.clone());
    let hf: Func = Arc::new(move |x| Ok(hc.eval(x)?));
    let dlog_h: Func = Arc::new(move |x| Ok(hpc.eval(x)? / h.eval(x)?));
    let base = spec.clone();
    let (hc, hpc) = (hf.clone(), h_prime.clone());
    let rate: Func = Arc::new(move |x| {
        let s = base.sigma(x)?;
        let ah = 0.5 * s * s * h_second.eval(x)? + base.drift(x)? * hpc.eval(x)?;
        Ok(-ah / hc(x)?)
    });
    let mut ch = Vec::new();
    for &(y, n) in charges {
        spec.check_interior("charge site", y)?;
        ch.push((y, -n / (2.0 * hf(y)?)));
    }
    let sp = scale_prime(ss);
    let anchor = ss.anchor();
    let div = divergence(&sp, &hf, spec, anchor);
    if div != (Verdict::Yes, Verdict::Yes) {
        return Err(Error::NotRecurrentTransform(format!(
            "s_h divergence verdicts (left, right) = ({}, {})",
            div.0.as_str(),
            div.1.as_str()
        )));
    }
    Ok(TransformSpec {
        kind: TransformKind::GenericH,
        base: spec.clone(),
        transformed: extended_drift(spec, &dlog_h, format!("{}^h", spec.name())),
        s_h: numeric_scale(sp, hf.clone(), anchor),
        h: hf,
        dlog_h,
        continuous_rate: rate,
        charges: ch,
        s_h_anchor: anchor,
        target: Target::Recurrent,
        alpha: None,
        divergence: Some(div),
        explodes: None,
    })
}

fn probe_grid(spec: &DiffusionSpec) -> Vec<f64> {
    let (l, r) = spec.interval();
    let c = spec.default_anchor();
    (1..20)
        .map(|i| {
            let t = i as f64 / 20.0;
            match (l.is_finite(), r.is_finite()) {
                (true, true) => l + t * (r - l),
                (true, false) => l + (c - l) * (8.0 * (t - 0.5)).exp(),
                (false, true) => r - (r - c) * (8.0 * (0.5 - t)).exp(),
                _ => c + 10.0 * (t - 0.5) * 4.0,
            }
        })
        .collect()
}

/// π(x) = h²m'/Z for positive-recurrent kinds.
pub struct StationaryDensity {
    t: TransformSpec,
    m: Func,
    pub normalizer: f64,
}

impl StationaryDensity {
    pub fn pdf(&self, x: f64) -> Result<f64> {
        let h = self.t.h(x)?;
        Ok(h * h * (self.m)(x)? / self.normalizer)
    }
}

pub fn stationary_distribution(t: &TransformSpec, ss: &Arc<ScaleSpeed>) -> Result<StationaryDensity> {
    if t.target != Target::PositiveRecurrent {
        return Err(Error::Precondition("stationary law needs an alpha-kind transform".into()));
    }
    let ss2 = ss.clone();
    let m: Func = Arc::new(move |x| ss2.m_density(x));
    let (l, r) = t.base.interval();
    let dens = |x: f64| match (t.h(x), m(x)) {
        (Ok(h), Ok(mv)) => h * h * mv,
        _ => f64::NAN,
    };
    // split at the atoms, where h² has kinks
    let mut pts: Vec<f64> = t.charges.iter().map(|c| c.0).collect();
    pts.sort_by(f64::total_cmp);
    let mut z = 0.0;
    let mut prev = l;
    for &p in pts.iter().chain(std::iter::once(&r)) {
        z += integrate_any(dens, prev, p, 1e-11)?;
        prev = p;
    }
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::Quadrature(format!("normalizing integral is {z}")));
    }
    Ok(StationaryDensity {
        t: t.clone(),
        m,
        normalizer: z,
    })
}

/// h = 1 + c|s|, turning a recurrent diffusion into a transient one.
pub fn transient_transform(spec: &DiffusionSpec, ss: &Arc<ScaleSpeed>, c: f64) -> Result<TransformSpec> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter(format!("c must be positive, got {c}")));
    }
    match ss.is_transient() {
        Verdict::No => {}
        Verdict::Yes => return Err(Error::NotRecurrent("both scale limits must be infinite".into())),
        Verdict::Inconclusive => return Err(Error::NotRecurrent("scale limits are inconclusive".into())),
    }
    let ystar = ss.anchor();
    let s1 = ss.clone();
    let s2 = ss.clone();
    let s3 = ss.clone();
    let h: Func = Arc::new(move |x| Ok(1.0 + c * s1.s(x)?.abs()));
    let dlog_h: Func = Arc::new(move |x| {
        let s = s2.s(x)?;
        let sp = s2.s_prime(x)?;
        // left derivative of |s| at y*
        Ok(if x <= ystar { -c * sp / (1.0 - c * s) } else { c * sp / (1.0 + c * s) })
    });
    let s_tilde: Func = Arc::new(move |x| {
        let s = s3.s(x)?;
        Ok((1.0 + c * (s + s.abs())) / (2.0 * (1.0 + c * s.abs())))
    });
    Ok(TransformSpec {
        kind: TransformKind::Transient,
        base: spec.clone(),
        transformed: extended_drift(spec, &dlog_h, format!("{}^h(transient,c={c})", spec.name())),
        h,
        dlog_h,
        continuous_rate: Arc::new(zero),
        charges: vec![(ystar, -c * ss.s_prime(ystar)?)],
        s_h: s_tilde,
        s_h_anchor: ystar,
        target: Target::Transient,
        alpha: None,
        divergence: None,
        explodes: None,
    })
}

/// α-atom transform at y followed by the transient transform on its scale
/// with c = u^λ(y,y)/2; h = Φ = u^λ(·,y)(1 + c|s_h|).
pub fn composed_os_transform(spec: &DiffusionSpec, fp: &Arc<FundamentalPair>, y: f64) -> Result<TransformSpec> {
    if !spec.is_natural_scale() {
        return Err(Error::Precondition("composed transform needs a base in natural scale".into()));
    }
    spec.check_interior("y", y)?;
    let lambda = fp.alpha();
    let f1 = fp.clone();
    let f2 = fp.clone();
    let f3 = fp.clone();
    let two_w = 2.0 * fp.wronskian();
    // Φ = (ψ(x)φ(y) + φ(x)ψ(y)) / 2w
    let h: Func = Arc::new(move |x| Ok(composed_phi(&f1, y, x, two_w)));
    let dlog_h: Func = Arc::new(move |x| {
        let a = (f2.ln_psi(x) + f2.ln_phi(y)).exp();
        let b = (f2.ln_phi(x) + f2.ln_psi(y)).exp();
        Ok((a * f2.psi_log_derivative(x) + b * f2.phi_log_derivative(x)) / (a + b))
    });
    let s_tilde: Func = Arc::new(move |x| {
        // ψ(x)φ(y) / (ψ(x)φ(y) + φ(x)ψ(y)) as a logistic of the log-ratio
        let t = f3.ln_psi(x) + f3.ln_phi(y) - f3.ln_phi(x) - f3.ln_psi(y);
        Ok(1.0 / (1.0 + (-t).exp()))
    });
    Ok(TransformSpec {
        kind: TransformKind::ComposedOs,
        base: spec.clone(),
        transformed: extended_drift(spec, &dlog_h, format!("{}^Phi(lambda={lambda})", spec.name())),
        h,
        dlog_h,
        continuous_rate: Arc::new(move |_| Ok(-lambda)),
        // the α-atom charge and the transient charge cancel at y
        charges: Vec::new(),
        s_h: s_tilde,
        s_h_anchor: y,
        target: Target::Transient,
        alpha: Some(lambda),
        divergence: None,
        explodes: None,
    })
}

fn composed_phi(fp: &FundamentalPair, y: f64, x: f64, two_w: f64) -> f64 {
    ((fp.ln_psi(x) + fp.ln_phi(y)).exp() + (fp.ln_phi(x) + fp.ln_psi(y)).exp()) / two_w
}

/// Φ(x) = u^λ(x,y)(1 + c|s_h(x)|) with c = u^λ(y,y)/2, computed literally
/// from the two stages (cross-check for the closed form used above).
pub fn composed_weight_staged(fp: &FundamentalPair, y: f64, x: f64) -> f64 {
    let c = fp.u(y, y) / 2.0;
    fp.u(x, y) * (1.0 + c * transformed_scale_alpha(fp, y, x).abs())
}

/// h(x) = x for a driftless diffusion on (0, ∞): the conditioned-to-infinity limit.
pub fn h_limit_transform(spec: &DiffusionSpec, ss: &ScaleSpeed) -> Result<TransformSpec> {
    if !spec.is_natural_scale() {
        return Err(Error::Precondition("h-limit transform needs a base in natural scale".into()));
    }
    if spec.interval() != (0.0, f64::INFINITY) {
        return Err(Error::Precondition("h-limit transform needs the interval (0, inf)".into()));
    }
    let explodes = ss.classify().martingale.map(|v| match v {
        Verdict::Yes => Verdict::No,
        Verdict::No => Verdict::Yes,
        Verdict::Inconclusive => Verdict::Inconclusive,
    });
    Ok(TransformSpec {
        kind: TransformKind::HLimit,
        base: spec.clone(),
        transformed: extended_drift(spec, &(Arc::new(|x: f64| Ok(1.0 / x)) as Func), format!("{}^x", spec.name())),
        h: Arc::new(Ok),
        dlog_h: Arc::new(|x| Ok(1.0 / x)),
        continuous_rate: Arc::new(zero),
        charges: Vec::new(),
        s_h: Arc::new(|x| Ok(1.0 - 1.0 / x)),
        s_h_anchor: 1.0,
        target: Target::Transient,
        alpha: None,
        divergence: None,
        explodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{expand_family, ModelFamily};
    use crate::potentials::fundamental_solutions;

    fn ss(spec: &DiffusionSpec) -> Arc<ScaleSpeed> {
        Arc::new(ScaleSpeed::new(spec).unwrap())
    }

    fn nat_half_line() -> DiffusionSpec {
        DiffusionSpec::new("nat", Coef::parse("1+x").unwrap(), Coef::constant(0.0), 0.0, f64::INFINITY).unwrap()
    }

    #[test]
    fn atom_on_half_line() {
        let spec = nat_half_line();
        let s = ss(&spec);
        let y = 2.0;
        let t = recurrent_from_atom(&spec, &s, y).unwrap();
        for x in [0.3, 1.0, 2.0, 2.5, 7.0] {
            let sig = 1.0 + x;
            let extra = if x <= y { sig * sig / x } else { 0.0 };
            assert!((t.drift(x).unwrap() - extra).abs() < 1e-10 * (1.0 + extra), "{x}");
        }
        assert_eq!(t.charges(), &[(2.0, 0.25)]);
        assert_eq!(t.divergence, Some((Verdict::Yes, Verdict::Yes)));
    }

    #[test]
    fn atom_on_unit_interval() {
        let spec = DiffusionSpec::new("bm01", Coef::constant(1.0), Coef::constant(0.0), 0.0, 1.0).unwrap();
        let s = ss(&spec);
        let t = recurrent_from_atom(&spec, &s, 0.5).unwrap();
        let u = |x: f64| f64::min(x, 0.5) * (1.0 - f64::max(x, 0.5));
        for x in [0.1, 0.3, 0.49, 0.51, 0.8, 0.95] {
            let want = if x <= 0.5 { 1.0 / x } else { -1.0 / (1.0 - x) };
            assert!((t.drift(x).unwrap() - want).abs() < 1e-10);
            let fd = (u(x + 1e-6) - u(x - 1e-6)) / 2e-6 / u(x);
            assert!((t.dlog_h(x).unwrap() - fd).abs() < 1e-5);
        }
        // left derivative at the atom
        assert!((t.drift(0.5).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(t.divergence, Some((Verdict::Yes, Verdict::Yes)));
    }

    #[test]
    fn measure_matches_atom() {
        let spec = nat_half_line();
        let s = ss(&spec);
        let a = recurrent_from_atom(&spec, &s, 1.3).unwrap();
        let m = recurrent_from_measure(&spec, &s, &MeasureSpec::dirac(1.3)).unwrap();
        for i in 0..20 {
            let x = 0.05 + 0.4 * i as f64;
            let (da, dm) = (a.drift(x).unwrap(), m.drift(x).unwrap());
            assert!((da - dm).abs() <= 1e-10 * da.abs().max(1.0));
        }
        assert_eq!(a.charges(), m.charges());

        let two = recurrent_from_measure(&spec, &s, &MeasureSpec::uniform(&[1.0, 2.0]).unwrap()).unwrap();
        assert!((two.h(1.5).unwrap() - 1.25).abs() < 1e-14);
        assert_eq!(two.divergence, Some((Verdict::Yes, Verdict::Yes)));
        assert!(MeasureSpec::new(vec![(1.0, 0.5), (2.0, 0.4)]).is_err());
    }

    #[test]
    fn recurrent_input_rejected() {
        let spec = expand_family(&ModelFamily::Brownian).unwrap();
        assert!(matches!(recurrent_from_atom(&spec, &ss(&spec), 0.0), Err(Error::Recurrent)));
    }

    #[test]
    fn alpha_atom_brownian() {
        let spec = expand_family(&ModelFamily::Brownian).unwrap();
        let s = ss(&spec);
        let alpha: f64 = 0.5;
        let fp = Arc::new(fundamental_solutions(&spec, &s, alpha).unwrap());
        let t = recurrent_alpha_atom(&spec, &s, &fp, 0.0).unwrap();
        let k = (2.0 * alpha).sqrt();
        for x in [-3.0, -0.5, 0.25, 2.0] {
            assert!((t.drift(x).unwrap() + k * f64::signum(x)).abs() < 1e-8, "{x}");
            // s_h = ∫_0^x 4k² e^{2k|z|} dz since u^α = e^{−k|x−y|}/(2k)
            let want = f64::signum(x) * 4.0 * k * k * ((2.0 * k * x.abs()).exp() - 1.0) / (2.0 * k);
            assert!((t.s_h(x).unwrap() / want - 1.0).abs() < 1e-8, "{x}");
        }
        assert_eq!(t.continuous_rate(1.0).unwrap(), -0.5);
        assert!((t.charges()[0].1 - 1.0).abs() < 1e-9);
        assert_eq!(t.divergence, Some((Verdict::Yes, Verdict::Yes)));

        let pi = stationary_distribution(&t, &s).unwrap();
        for x in [-1.0, 0.0, 0.7] {
            let want = k * (-2.0 * k * f64::abs(x)).exp();
            assert!((pi.pdf(x).unwrap() - want).abs() < 1e-8);
        }
        let mass = integrate_any(|x| pi.pdf(x).unwrap(), f64::NEG_INFINITY, 0.0, 1e-10).unwrap()
            + integrate_any(|x| pi.pdf(x).unwrap(), 0.0, f64::INFINITY, 1e-10).unwrap();
        assert!((mass - 1.0).abs() < 1e-8);
        assert!((pi.pdf(1.3).unwrap() - pi.pdf(-1.3).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn alpha_measure_two_atoms() {
        let spec = expand_family(&ModelFamily::Brownian).unwrap();
        let s = ss(&spec);
        let fp = Arc::new(fundamental_solutions(&spec, &s, 0.5).unwrap());
        let t = recurrent_alpha_measure(&spec, &s, &fp, &MeasureSpec::uniform(&[-1.0, 1.0]).unwrap()).unwrap();
        // u^α(0,±1) = e^{−1}/2 under m = 2dx
        assert!((t.h(0.0).unwrap() - 0.5 * (-1.0f64).exp()).abs() < 1e-9);
        let h1 = t.h(1.0).unwrap();
        assert!((t.charges()[1].1 - 0.5 / (2.0 * h1)).abs() < 1e-12);
        let single = recurrent_alpha_measure(&spec, &s, &fp, &MeasureSpec::dirac(0.3)).unwrap();
        let atom = recurrent_alpha_atom(&spec, &s, &fp, 0.3).unwrap();
        for x in [-2.0, 0.0, 0.5, 3.0] {
            assert_eq!(single.drift(x).unwrap(), atom.drift(x).unwrap());
        }
    }

    #[test]
    fn bessel_generic() {
        let delta = 5.0;
        let spec = expand_family(&ModelFamily::SquaredBessel(delta)).unwrap();
        let s = ss(&spec);
        let p = (2.0 - delta) / 4.0;
        let t = generic_recurrent(
            &spec,
            &s,
            Coef::parse(&format!("x^{p}")).unwrap(),
            Coef::parse(&format!("{p}*x^({p}-1)")).unwrap(),
            Coef::parse(&format!("{p}*({p}-1)*x^({p}-2)")).unwrap(),
            &[],
        )
        .unwrap();
        for x in [0.01, 0.5, 1.0, 4.0, 100.0] {
            assert!((t.drift(x).unwrap() - 2.0).abs() < 1e-10);
            let rate = (delta - 2.0f64).powi(2) / (8.0 * x);
            assert!((t.continuous_rate(x).unwrap() - rate).abs() < 1e-10 * rate);
        }
        // normalized s' = 1.5 x^{-5/2}, so s_h = 1.5 log x
        for x in [0.2, 3.0] {
            assert!((t.s_h(x).unwrap() - 1.5 * f64::ln(x)).abs() < 1e-8);
        }
        // h ≡ 1 on a recurrent base is the identity
        let bm = expand_family(&ModelFamily::Brownian).unwrap();
        let id = generic_recurrent(&bm, &ss(&bm), Coef::constant(1.0), Coef::constant(0.0), Coef::constant(0.0), &[]).unwrap();
        assert_eq!(id.drift(0.7).unwrap(), 0.0);
        assert_eq!(id.continuous_rate(0.7).unwrap(), 0.0);
        // h = 1 on a transient base is rejected
        let bad = generic_recurrent(&spec, &s, Coef::constant(1.0), Coef::constant(0.0), Coef::constant(0.0), &[]);
        assert!(matches!(bad, Err(Error::NotRecurrentTransform(_))));
    }

    #[test]
    fn transient_brownian() {
        let spec = expand_family(&ModelFamily::Brownian).unwrap();
        let s = ss(&spec);
        let t = transient_transform(&spec, &s, 1.0).unwrap();
        for x in [-2.0, -0.3, 0.4, 5.0] {
            assert!((t.drift(x).unwrap() - x.signum() / (1.0 + x.abs())).abs() < 1e-14);
        }
        assert_eq!(t.s_h(0.0).unwrap(), 0.5);
        assert!(t.s_h(-1e12).unwrap() < 1e-11);
        assert!(t.s_h(1e12).unwrap() > 1.0 - 1e-11);
        assert_eq!(t.charges(), &[(0.0, -1.0)]);
        let sb = expand_family(&ModelFamily::SquaredBessel(3.0)).unwrap();
        assert!(matches!(transient_transform(&sb, &ss(&sb), 1.0), Err(Error::NotRecurrent(_))));
    }

    #[test]
    fn composed_brownian() {
        let spec = expand_family(&ModelFamily::Brownian).unwrap();
        let s = ss(&spec);
        let fp = Arc::new(fundamental_solutions(&spec, &s, 0.5).unwrap());
        let t = composed_os_transform(&spec, &fp, 0.0).unwrap();
        assert!((t.h(0.0).unwrap() - fp.u(0.0, 0.0)).abs() < 1e-12);
        assert!((t.s_h(0.0).unwrap() - 0.5).abs() < 1e-14);
        let sh = |x: f64| integrate(|z| (2.0 * z.abs()).exp() * 4.0, 0.0, x, 1e-12).unwrap();
        for x in [-2.0f64, -0.4, 0.0, 0.9, 3.0] {
            let phi = 0.5 * (-x.abs()).exp() * (1.0 + 0.25 * sh(x).abs());
            assert!((t.h(x).unwrap() / phi - 1.0).abs() < 1e-8, "{x}");
            assert!((composed_weight_staged(&fp, 0.0, x) / phi - 1.0).abs() < 1e-8);
            let st = t.s_h(x).unwrap();
            assert!(st > 0.0 && st < 1.0);
            // the staged drift: σ²(u_x/u ± c s_h'/(1 ± c s_h))
            let c = fp.u(0.0, 0.0) / 2.0;
            let sp = fp.s_prime(x) / fp.u(x, 0.0).powi(2);
            let s_h = transformed_scale_alpha(&fp, 0.0, x);
            let staged = fp.dlog_u(x, 0.0) + if x <= 0.0 { -c * sp / (1.0 - c * s_h) } else { c * sp / (1.0 + c * s_h) };
            assert!((t.drift(x).unwrap() - staged).abs() < 1e-8);
        }
        assert!(t.charges().is_empty());
    }

    #[test]
    fn h_limit() {
        let g = expand_family(&ModelFamily::Gbm(0.3)).unwrap();
        let t = h_limit_transform(&g, &ScaleSpeed::new(&g).unwrap()).unwrap();
        assert!((t.drift(2.0).unwrap() - 0.09 * 2.0).abs() < 1e-15);
        assert_eq!(t.explodes, Some(Verdict::No));
        assert_eq!(t.s_h(4.0).unwrap(), 0.75);
        let ib = expand_family(&ModelFamily::InverseBessel3).unwrap();
        let t = h_limit_transform(&ib, &ScaleSpeed::new(&ib).unwrap()).unwrap();
        assert_eq!(t.drift(2.0).unwrap(), 8.0);
        assert_eq!(t.explodes, Some(Verdict::Yes));
        let sb = expand_family(&ModelFamily::SquaredBessel(3.0)).unwrap();
        assert!(h_limit_transform(&sb, &ScaleSpeed::new(&sb).unwrap()).is_err());
    }

    #[test]
    fn density_variant() {
        let spec = DiffusionSpec::new("bm01", Coef::constant(1.0), Coef::constant(0.0), 0.0, 1.0).unwrap();
        let s = ss(&spec);
        // f ≡ 1/2 against m = 2dx: h = ∫u(x,y)dy = x(1−x)/2
        let t = recurrent_from_density(&spec, &s, Coef::constant(0.5), 200).unwrap();
        for x in [0.1, 0.37, 0.5, 0.9] {
            assert!((t.h(x).unwrap() - x * (1.0 - x) / 2.0).abs() < 1e-10);
            let want = (1.0 - 2.0 * x) / (x * (1.0 - x));
            assert!((t.drift(x).unwrap() - want).abs() < 1e-7);
            assert!((t.continuous_rate(x).unwrap() - 1.0 / (x * (1.0 - x))).abs() < 1e-8);
        }
    }
}
