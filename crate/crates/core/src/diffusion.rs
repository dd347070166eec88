//! Regular diffusions: specification, scale and speed, boundary classification.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use serde::Serialize;

use crate::coeffs::{Coef, EvalError};
use crate::error::{Error, Result};
use crate::quad::{bisect, improper, integrate, Improper, Verdict};

/// dX = σ(X) dB + b(X) dt on (l, r), absorbed at accessible endpoints.
#[derive(Clone, Debug)]
pub struct DiffusionSpec {
    name: Arc<str>,
    sigma: Coef,
    drift: Coef,
    l: f64,
    r: f64,
}

impl DiffusionSpec {
    pub fn new(name: impl Into<String>, sigma: Coef, drift: Coef, l: f64, r: f64) -> Result<Self> {
        if !(l < r) || l.is_nan() || r.is_nan() || l == f64::INFINITY || r == f64::NEG_INFINITY {
            return Err(Error::InvalidParameter(format!("interval ({l}, {r}) is empty")));
        }
        Ok(DiffusionSpec {
            name: name.into().into(),
            sigma,
            drift,
            l,
            r,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sigma(&self, x: f64) -> std::result::Result<f64, EvalError> {
        self.sigma.eval(x)
    }

    pub fn drift(&self, x: f64) -> std::result::Result<f64, EvalError> {
        self.drift.eval(x)
    }

    pub fn sigma_coef(&self) -> &Coef {
        &self.sigma
    }

    pub fn drift_coef(&self) -> &Coef {
        &self.drift
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.l, self.r)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.l < x && x < self.r
    }

    /// Driftless, hence s(x) = x up to an affine map.
    pub fn is_natural_scale(&self) -> bool {
        self.drift.is_zero()
    }

    /// Same σ and interval with a different drift.
    pub fn with_drift(&self, name: impl Into<String>, drift: Coef) -> DiffusionSpec {
        DiffusionSpec {
            name: name.into().into(),
            sigma: self.sigma.clone(),
            drift,
            l: self.l,
            r: self.r,
        }
    }

    pub fn default_anchor(&self) -> f64 {
        default_anchor(self.l, self.r)
    }

    pub(crate) fn check_interior(&self, what: &str, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "{what} = {x} is not interior to ({}, {})",
                self.l, self.r
            )))
        }
    }
}

pub fn default_anchor(l: f64, r: f64) -> f64 {
    match (l.is_finite(), r.is_finite()) {
        (true, true) => 0.5 * (l + r),
        (true, false) => l + 1.0,
        (false, true) => r - 1.0,
        (false, false) => 0.0,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EsProbe {
    pub x: f64,
    pub sigma_positive: bool,
    pub locally_integrable: Verdict,
}

#[derive(Debug, Clone, Serialize)]
pub struct EsReport {
    pub probes: Vec<EsProbe>,
}

impl EsReport {
    pub fn failures(&self) -> Vec<f64> {
        self.probes
            .iter()
            .filter(|p| !p.sigma_positive || p.locally_integrable != Verdict::Yes)
            .map(|p| p.x)
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }
}

/// Probe σ > 0 and local integrability of (1+|b|)/σ² around each point.
pub fn check_engelbert_schmidt(spec: &DiffusionSpec, probes: &[f64]) -> EsReport {
    let (l, r) = spec.interval();
    let f = |y: f64| match (spec.sigma(y), spec.drift(y)) {
        (Ok(s), Ok(b)) if s != 0.0 => (1.0 + b.abs()) / (s * s),
        _ => f64::INFINITY,
    };
    let probes = probes
        .iter()
        .map(|&x| {
            let sigma_positive = matches!(spec.sigma(x), Ok(s) if s > 0.0);
            let mut eps = 1e-3 * x.abs().max(1.0);
            if l.is_finite() {
                eps = eps.min(0.5 * (x - l));
            }
            if r.is_finite() {
                eps = eps.min(0.5 * (r - x));
            }
            // integrate outward from the probe, treating it as a potential singularity
            let side = |to: f64| -> Verdict {
                let g = |y: f64| f(y);
                match improper(g, to, x) {
                    Improper::Finite(_) => Verdict::Yes,
                    Improper::Infinite(_) => Verdict::No,
                    Improper::Inconclusive(_) => Verdict::Inconclusive,
                }
            };
            let locally_integrable = if !spec.contains(x) || eps <= 0.0 {
                Verdict::No
            } else if !sigma_positive {
                Verdict::No
            } else {
                match (side(x - eps), side(x + eps)) {
                    (Verdict::Yes, Verdict::Yes) => Verdict::Yes,
                    (Verdict::No, _) | (_, Verdict::No) => Verdict::No,
                    _ => Verdict::Inconclusive,
                }
            };
            EsProbe {
                x,
                sigma_positive,
                locally_integrable,
            }
        })
        .collect();
    EsReport { probes }
}

/// A boundary limit of the scale function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Limit {
    Finite(f64),
    PlusInfinity,
    MinusInfinity,
    Inconclusive,
}

impl Limit {
    pub fn is_finite(&self) -> bool {
        matches!(self, Limit::Finite(_))
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Limit::Finite(v) => Some(*v),
            _ => None,
        }
    }

    fn from_improper(v: Improper) -> Limit {
        match v {
            Improper::Finite(v) => Limit::Finite(v),
            Improper::Infinite(s) if s > 0.0 => Limit::PlusInfinity,
            Improper::Infinite(_) => Limit::MinusInfinity,
            Improper::Inconclusive(_) => Limit::Inconclusive,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Knots along the truncation sequence toward one endpoint, so that
/// evaluations integrate only from the nearest knot.
#[derive(Debug, Default)]
struct SideTable {
    pts: Vec<f64>,
    ln_sp: Vec<f64>,
    // s_raw at the knots actually traced by the limit computation
    s_raw: Vec<f64>,
    // s_raw − limit at those knots, when the limit is finite
    to_limit: Vec<f64>,
}

impl SideTable {
    // last knot lying between the anchor and x
    fn base(&self, anchor: f64, x: f64, n: usize) -> Option<usize> {
        let d = (x - anchor).abs();
        let k = self.pts[..n].partition_point(|p| (p - anchor).abs() <= d);
        k.checked_sub(1)
    }
}

/// Scale function s, its derivative s' and the speed density m' = 2/(s'σ²).
///
/// Normalization: s(l)=0, s(r)=1 when both limits are finite; s(l)=0, s(c)=1
/// when only the left is; s(c)=0, s(r)=1 when only the right is; s(c)=0 with
/// s'(c)=1 when neither is.
pub struct ScaleSpeed {
    spec: DiffusionSpec,
    anchor: f64,
    natural: bool,
    raw_left: Limit,
    raw_right: Limit,
    k: f64,
    offset: f64,
    // natural scale: s = k (x − shift), avoiding cancellation near a finite end
    shift: f64,
    left: SideTable,
    right: SideTable,
    s_cache: RwLock<HashMap<u64, f64>>,
    report: OnceLock<ClassificationReport>,
}

impl std::fmt::Debug for ScaleSpeed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScaleSpeed")
            .field("spec", &self.spec.name())
            .field("anchor", &self.anchor)
            .field("left", &self.left_limit())
            .field("right", &self.right_limit())
            .finish()
    }
}

const QTOL: f64 = 1e-12;

impl ScaleSpeed {
    pub fn new(spec: &DiffusionSpec) -> Result<ScaleSpeed> {
        ScaleSpeed::with_anchor(spec, spec.default_anchor())
    }

    pub fn with_anchor(spec: &DiffusionSpec, anchor: f64) -> Result<ScaleSpeed> {
        spec.check_interior("anchor", anchor)?;
        let es = check_engelbert_schmidt(spec, &[anchor]);
        if !es.passed() {
            return Err(Error::Precondition(format!(
                "Engelbert–Schmidt conditions fail at the anchor {anchor}"
            )));
        }
        let natural = spec.is_natural_scale();
        let mut ss = ScaleSpeed {
            spec: spec.clone(),
            anchor,
            natural,
            raw_left: Limit::Inconclusive,
            raw_right: Limit::Inconclusive,
            k: 1.0,
            offset: 0.0,
            shift: anchor,
            left: SideTable::default(),
            right: SideTable::default(),
            s_cache: RwLock::new(HashMap::new()),
            report: OnceLock::new(),
        };
        let (l, r) = spec.interval();
        if natural {
            ss.raw_left = if l.is_finite() { Limit::Finite(l - anchor) } else { Limit::MinusInfinity };
            ss.raw_right = if r.is_finite() { Limit::Finite(r - anchor) } else { Limit::PlusInfinity };
        } else {
            for side in [Side::Left, Side::Right] {
                let end = if side == Side::Left { l } else { r };
                let mut t = SideTable::default();
                let mut prev = (anchor, 0.0);
                for p in crate::quad::truncations(anchor, end).take(80) {
                    let Ok(inc) = integrate(|z| ss.ln_sp_integrand(z), prev.0, p, QTOL) else {
                        break;
                    };
                    prev = (p, prev.1 - 2.0 * inc);
                    t.pts.push(p);
                    t.ln_sp.push(prev.1);
                }
                if side == Side::Left {
                    ss.left = t;
                } else {
                    ss.right = t;
                }
                let (lim, trace) = crate::quad::improper_trace(|z| ss.raw_sp(z), anchor, end);
                let lim = Limit::from_improper(lim);
                let t = if side == Side::Left { &mut ss.left } else { &mut ss.right };
                t.s_raw = trace.iter().map(|q| q.1).collect();
                if let Limit::Finite(v) = lim {
                    // accumulate the remaining increments backward for accuracy
                    let n = t.s_raw.len();
                    let mut rest = t.s_raw[n - 1] - v;
                    t.to_limit = vec![0.0; n];
                    t.to_limit[n - 1] = rest;
                    for i in (0..n - 1).rev() {
                        rest += t.s_raw[i] - t.s_raw[i + 1];
                        t.to_limit[i] = rest;
                    }
                }
                if side == Side::Left {
                    ss.raw_left = lim;
                } else {
                    ss.raw_right = lim;
                }
            }
        }
        match (ss.raw_left, ss.raw_right) {
            (Limit::Finite(a), Limit::Finite(b)) => {
                ss.k = 1.0 / (b - a);
                ss.offset = a;
            }
            (Limit::Finite(a), _) => {
                ss.k = -1.0 / a;
                ss.offset = a;
            }
            (_, Limit::Finite(b)) => {
                ss.k = 1.0 / b;
                ss.offset = 0.0;
            }
            _ => {}
        }
        if natural && ss.raw_left.is_finite() {
            ss.shift = l;
        }
        Ok(ss)
    }

    pub fn spec(&self) -> &DiffusionSpec {
        &self.spec
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    fn ln_sp_integrand(&self, z: f64) -> f64 {
        match (self.spec.drift(z), self.spec.sigma(z)) {
            (Ok(b), Ok(s)) => b / (s * s),
            _ => f64::NAN,
        }
    }

    fn table(&self, x: f64) -> &SideTable {
        if x < self.anchor {
            &self.left
        } else {
            &self.right
        }
    }

    fn raw_ln_sp(&self, x: f64) -> Result<f64> {
        if self.natural {
            return Ok(0.0);
        }
        let t = self.table(x);
        let (from, base) = match t.base(self.anchor, x, t.pts.len()) {
            Some(i) => (t.pts[i], t.ln_sp[i]),
            None => (self.anchor, 0.0),
        };
        Ok(base - 2.0 * integrate(|z| self.ln_sp_integrand(z), from, x, QTOL)?)
    }

    fn raw_sp(&self, x: f64) -> f64 {
        self.raw_ln_sp(x).map(f64::exp).unwrap_or(f64::NAN)
    }

    /// s_raw(x) − reference, where the reference is the finite limit on x's
    /// side when there is one (no cancellation near that end), else 0.
    fn raw_s_rel(&self, x: f64) -> Result<(f64, bool)> {
        let t = self.table(x);
        let rel = !t.to_limit.is_empty();
        let (from, base) = match t.base(self.anchor, x, t.s_raw.len()) {
            Some(i) => (t.pts[i], if rel { t.to_limit[i] } else { t.s_raw[i] }),
            None => {
                let lim = if x < self.anchor { self.raw_left } else { self.raw_right };
                (self.anchor, if rel { -lim.value().unwrap() } else { 0.0 })
            }
        };
        Ok((base + integrate(|z| self.raw_sp(z), from, x, 1e-11)?, rel))
    }

    pub fn s(&self, x: f64) -> Result<f64> {
        self.spec.check_interior("x", x)?;
        if self.natural {
            return Ok(self.k * (x - self.shift));
        }
        if let Some(v) = self.s_cache.read().unwrap().get(&x.to_bits()) {
            return Ok(*v);
        }
        let (v, rel) = self.raw_s_rel(x)?;
        let raw_minus_offset = if rel {
            let lim = if x < self.anchor { self.raw_left } else { self.raw_right };
            v + (lim.value().unwrap() - self.offset)
        } else {
            v - self.offset
        };
        let out = self.k * raw_minus_offset;
        let mut cache = self.s_cache.write().unwrap();
        if cache.len() < 1 << 20 {
            cache.insert(x.to_bits(), out);
        }
        Ok(out)
    }

    /// |s(e) − s(x)| for the endpoint e on `side`, computed without cancellation.
    pub fn s_to_limit(&self, x: f64, side: Side) -> Result<f64> {
        let lim = self.limit(side);
        let Limit::Finite(se) = lim else {
            return Err(Error::InconclusiveLimit(match side {
                Side::Left => self.spec.l,
                Side::Right => self.spec.r,
            }));
        };
        if self.natural {
            let (l, r) = self.spec.interval();
            return Ok(self.k * if side == Side::Left { x - l } else { r - x });
        }
        let same_side = (x < self.anchor) == (side == Side::Left);
        if same_side {
            let (v, rel) = self.raw_s_rel(x)?;
            if rel {
                return Ok((self.k * v).abs());
            }
        }
        Ok((se - self.s(x)?).abs())
    }

    pub fn ln_s_prime(&self, x: f64) -> Result<f64> {
        Ok(self.k.ln() + self.raw_ln_sp(x)?)
    }

    pub fn s_prime(&self, x: f64) -> Result<f64> {
        Ok(self.k * self.raw_ln_sp(x)?.exp())
    }

    pub fn m_density(&self, x: f64) -> Result<f64> {
        let s = self.spec.sigma(x)?;
        Ok(2.0 / (self.s_prime(x)? * s * s))
    }

    fn normalize(&self, lim: Limit) -> Limit {
        match lim {
            Limit::Finite(v) => Limit::Finite(self.k * (v - self.offset)),
            o => o,
        }
    }

    pub fn left_limit(&self) -> Limit {
        self.normalize(self.raw_left)
    }

    pub fn right_limit(&self) -> Limit {
        self.normalize(self.raw_right)
    }

    pub fn limit(&self, side: Side) -> Limit {
        match side {
            Side::Left => self.left_limit(),
            Side::Right => self.right_limit(),
        }
    }

    /// Transient iff at least one scale limit is finite.
    pub fn is_transient(&self) -> Verdict {
        match (self.raw_left, self.raw_right) {
            (Limit::Finite(_), _) | (_, Limit::Finite(_)) => Verdict::Yes,
            (Limit::Inconclusive, _) | (_, Limit::Inconclusive) => Verdict::Inconclusive,
            _ => Verdict::No,
        }
    }

    /// s⁻¹ by bracketing outward from the anchor and bisection.
    pub fn inverse(&self, v: f64) -> Result<f64> {
        let (l, r) = self.spec.interval();
        let c = self.anchor;
        let sc = self.s(c)?;
        let toward = if v >= sc { r } else { l };
        let mut near = c;
        for p in crate::quad::truncations(c, toward).take(60) {
            let sp = self.s(p)?;
            if (v >= sc && sp >= v) || (v < sc && sp <= v) {
                let (lo, hi) = if near < p { (near, p) } else { (p, near) };
                return bisect(|x| self.s(x).unwrap_or(f64::NAN), lo, hi, v);
            }
            near = p;
        }
        Err(Error::Bracketing(format!("s^-1({v}) not bracketed in ({l}, {r})")))
    }

    /// Integral of |S_e − s(x)| m'(x) dx toward endpoint e (Feller accessibility).
    fn feller(&self, side: Side) -> Verdict {
        let (l, r) = self.spec.interval();
        let e = if side == Side::Left { l } else { r };
        let Limit::Finite(se) = self.limit(side) else {
            return match self.limit(side) {
                Limit::Inconclusive => Verdict::Inconclusive,
                _ => Verdict::No,
            };
        };
        let f = |x: f64| match (self.s(x), self.m_density(x)) {
            (Ok(s), Ok(m)) => (se - s).abs() * m,
            _ => f64::NAN,
        };
        improper(f, self.anchor, e).is_finite()
    }

    fn speed_integral(&self, side: Side) -> Verdict {
        let (l, r) = self.spec.interval();
        let e = if side == Side::Left { l } else { r };
        improper(|x| self.m_density(x).unwrap_or(f64::NAN), self.anchor, e).is_finite()
    }

    /// Boundary classification, computed once and cached.
    pub fn classify(&self) -> &ClassificationReport {
        self.report.get_or_init(|| classify_with(self))
    }

    /// Natural/entrance/exit/regular subdivision, only computed on demand.
    pub fn boundary_class(&self, side: Side) -> BoundaryClass {
        let rep = self.classify();
        let ep = if side == Side::Left { &rep.left } else { &rep.right };
        match (ep.accessible, ep.speed_integral_finite) {
            (Verdict::Yes, Verdict::Yes) => BoundaryClass::Regular,
            (Verdict::Yes, Verdict::No) => BoundaryClass::Exit,
            (Verdict::No, _) => {
                let (l, r) = self.spec.interval();
                let e = if side == Side::Left { l } else { r };
                // entrance iff ∫ |M(e) − M(x)| s'(x) dx < ∞, i.e. ∫ m'(z)|s(z) − s(c)| dz < ∞
                let Ok(sc) = self.s(self.anchor) else {
                    return BoundaryClass::Unknown;
                };
                let g = |z: f64| match (self.s(z), self.m_density(z)) {
                    (Ok(s), Ok(m)) => (s - sc).abs() * m,
                    _ => f64::NAN,
                };
                match improper(g, self.anchor, e) {
                    Improper::Finite(_) => BoundaryClass::Entrance,
                    Improper::Infinite(_) => BoundaryClass::Natural,
                    Improper::Inconclusive(_) => BoundaryClass::Unknown,
                }
            }
            _ => BoundaryClass::Unknown,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryClass {
    Regular,
    Exit,
    Entrance,
    Natural,
    Unknown,
}

#[derive(Debug, Clone, Serialize)]
pub struct EndpointReport {
    pub point: f64,
    pub scale_limit: Limit,
    pub speed_integral_finite: Verdict,
    /// Feller test: the endpoint can be reached (explosion, for infinite endpoints).
    pub accessible: Verdict,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassificationReport {
    pub natural_scale: bool,
    pub left: EndpointReport,
    pub right: EndpointReport,
    /// Only for driftless diffusions on (0, ∞).
    pub martingale: Option<Verdict>,
    pub strictly_positive: Option<Verdict>,
}

impl ClassificationReport {
    pub fn any_inconclusive(&self) -> bool {
        let mut v = vec![
            self.left.accessible,
            self.right.accessible,
            self.left.speed_integral_finite,
            self.right.speed_integral_finite,
        ];
        v.extend(self.martingale);
        v.extend(self.strictly_positive);
        v.contains(&Verdict::Inconclusive)
            || matches!(self.left.scale_limit, Limit::Inconclusive)
            || matches!(self.right.scale_limit, Limit::Inconclusive)
    }
}

pub fn classify(spec: &DiffusionSpec) -> Result<ClassificationReport> {
    Ok(ScaleSpeed::new(spec)?.classify().clone())
}

fn classify_with(ss: &ScaleSpeed) -> ClassificationReport {
    let spec = ss.spec();
    let (l, r) = spec.interval();
    let endpoint = |side: Side, point: f64| EndpointReport {
        point,
        scale_limit: ss.limit(side),
        speed_integral_finite: ss.speed_integral(side),
        accessible: ss.feller(side),
    };
    let nonneg = spec.is_natural_scale() && l == 0.0 && r == f64::INFINITY;
    let ratio = |z: f64| match spec.sigma(z) {
        Ok(s) => z / (s * s),
        Err(_) => f64::NAN,
    };
    let (martingale, strictly_positive) = if nonneg {
        (
            Some(improper(ratio, 1.0, f64::INFINITY).diverges()),
            Some(improper(ratio, 1.0, 0.0).diverges()),
        )
    } else {
        (None, None)
    };
    ClassificationReport {
        natural_scale: spec.is_natural_scale(),
        left: endpoint(Side::Left, l),
        right: endpoint(Side::Right, r),
        martingale,
        strictly_positive,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{expand_family, ModelFamily};

    fn fam(f: ModelFamily) -> DiffusionSpec {
        expand_family(&f).unwrap()
    }

    #[test]
    fn es_probes() {
        let bm = fam(ModelFamily::Brownian);
        assert!(check_engelbert_schmidt(&bm, &[-1.0, 0.0, 1.0]).passed());
        let cev = fam(ModelFamily::Cev(1.0, 2.0));
        assert!(check_engelbert_schmidt(&cev, &[0.1, 1.0, 10.0]).passed());
        let bad = DiffusionSpec::new("vanish", Coef::parse("abs(x)").unwrap(), Coef::constant(0.0), -1.0, 1.0).unwrap();
        assert_eq!(check_engelbert_schmidt(&bad, &[-0.5, 0.0, 0.5]).failures(), vec![0.0]);
    }

    #[test]
    fn natural_scale_normalizations() {
        let bm = fam(ModelFamily::BrownianDrift(0.0));
        let ss = ScaleSpeed::new(&bm).unwrap();
        assert_eq!(ss.s(0.7).unwrap(), 0.7);
        assert_eq!(ss.m_density(3.0).unwrap(), 2.0);
        assert_eq!(ss.is_transient(), Verdict::No);

        let unit = DiffusionSpec::new("bm01", Coef::constant(1.0), Coef::constant(0.0), 0.0, 1.0).unwrap();
        let ss = ScaleSpeed::new(&unit).unwrap();
        assert!((ss.s(0.25).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(ss.left_limit(), Limit::Finite(0.0));
        assert_eq!(ss.right_limit(), Limit::Finite(1.0));

        let g = ScaleSpeed::new(&fam(ModelFamily::Gbm(0.3))).unwrap();
        assert_eq!(g.s(2.5).unwrap(), 2.5);
        assert_eq!(g.left_limit(), Limit::Finite(0.0));
        assert_eq!(g.right_limit(), Limit::PlusInfinity);
    }

    #[test]
    fn squared_bessel_scale() {
        let ss = ScaleSpeed::new(&fam(ModelFamily::SquaredBessel(3.0))).unwrap();
        assert_eq!(ss.left_limit(), Limit::MinusInfinity);
        let Limit::Finite(r) = ss.right_limit() else { panic!() };
        assert!((r - 1.0).abs() < 1e-12);
        for x in [0.01f64, 0.3, 1.0, 4.0, 100.0] {
            let exact = 1.0 - x.powf(-0.5);
            assert!((ss.s(x).unwrap() - exact).abs() < 1e-9 * (1.0 + exact.abs()), "{x} {}", ss.s(x).unwrap());
            let sp = 0.5 * x.powf(-1.5);
            assert!((ss.s_prime(x).unwrap() / sp - 1.0).abs() < 1e-10);
        }
        assert!((ss.inverse(0.5).unwrap() - 4.0).abs() < 1e-10);
    }

    #[test]
    fn s_prime_matches_finite_difference() {
        let spec = DiffusionSpec::new(
            "ou-ish",
            Coef::parse("1 + 0.5*x^2").unwrap(),
            Coef::parse("-x").unwrap(),
            f64::NEG_INFINITY,
            f64::INFINITY,
        )
        .unwrap();
        let ss = ScaleSpeed::new(&spec).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..21 {
            let x = -2.0 + 0.2 * i as f64;
            let s = ss.s(x).unwrap();
            assert!(s > prev);
            prev = s;
            let h = 1e-4;
            let fd = (ss.s(x + h).unwrap() - ss.s(x - h).unwrap()) / (2.0 * h);
            assert!((fd / ss.s_prime(x).unwrap() - 1.0).abs() < 1e-5, "{x}");
        }
    }

    #[test]
    fn golden_classifications() {
        let g = classify(&fam(ModelFamily::Gbm(0.3))).unwrap();
        assert_eq!(g.martingale, Some(Verdict::Yes));
        assert_eq!(g.strictly_positive, Some(Verdict::Yes));
        assert_eq!(g.left.accessible, Verdict::No);
        assert_eq!(g.right.accessible, Verdict::No);

        let ib = classify(&fam(ModelFamily::InverseBessel3)).unwrap();
        assert_eq!(ib.martingale, Some(Verdict::No));
        assert_eq!(ib.strictly_positive, Some(Verdict::Yes));
        assert_eq!(ib.right.accessible, Verdict::No);

        // cev(1, 0.5): σ² = x, ∫_0 x/x dx < ∞ so 0 is reached; martingale
        let c = classify(&fam(ModelFamily::Cev(1.0, 0.5))).unwrap();
        assert_eq!(c.martingale, Some(Verdict::Yes));
        assert_eq!(c.strictly_positive, Some(Verdict::No));
        assert_eq!(c.left.accessible, Verdict::Yes);

        // cev(1, 2): strict local martingale, like inverse-bessel3
        let c2 = classify(&fam(ModelFamily::Cev(1.0, 2.0))).unwrap();
        assert_eq!(c2.martingale, Some(Verdict::No));

        let bm = classify(&fam(ModelFamily::Brownian)).unwrap();
        assert_eq!(bm.martingale, None);
        assert_eq!(bm.left.scale_limit, Limit::MinusInfinity);
        assert_eq!(bm.right.accessible, Verdict::No);

        let sb = classify(&fam(ModelFamily::SquaredBessel(3.0))).unwrap();
        assert_eq!(sb.left.accessible, Verdict::No);
        assert!(!sb.any_inconclusive());

        // δ = 1: 0 is reached
        let sb1 = classify(&fam(ModelFamily::SquaredBessel(1.0))).unwrap();
        assert_eq!(sb1.left.accessible, Verdict::Yes);
    }

    #[test]
    fn boundary_classes() {
        let ss = ScaleSpeed::new(&fam(ModelFamily::SquaredBessel(3.0))).unwrap();
        assert_eq!(ss.boundary_class(Side::Left), BoundaryClass::Entrance);
        assert_eq!(ss.boundary_class(Side::Right), BoundaryClass::Natural);
        let bm = DiffusionSpec::new("bm01", Coef::constant(1.0), Coef::constant(0.0), 0.0, 1.0).unwrap();
        let ss = ScaleSpeed::new(&bm).unwrap();
        assert_eq!(ss.boundary_class(Side::Left), BoundaryClass::Regular);
    }
}
