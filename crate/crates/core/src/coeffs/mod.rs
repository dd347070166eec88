//! Coefficient expressions and built-in model families.

mod expr;

use std::fmt;
use std::sync::Arc;

pub use expr::{normal_cdf, parse_expr, BinOp, EvalError, Expr, Func, ParseError};

use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};

type NativeFn = dyn Fn(f64) -> f64 + Send + Sync;

#[derive(Clone)]
enum Repr {
    Expr(Arc<Expr>),
    Native(Arc<NativeFn>),
}

/// A scalar function of the state: either a parsed expression or a native closure.
#[derive(Clone)]
pub struct Coef {
    repr: Repr,
    label: Arc<str>,
    zero: bool,
}

impl Coef {
    pub fn parse(src: &str) -> std::result::Result<Coef, ParseError> {
        Ok(Coef::from_expr(parse_expr(src)?))
    }

    pub fn from_expr(e: Expr) -> Coef {
        Coef {
            zero: e.is_zero(),
            label: e.to_string().into(),
            repr: Repr::Expr(Arc::new(e)),
        }
    }

    pub fn native(label: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Coef {
        Coef {
            repr: Repr::Native(Arc::new(f)),
            label: label.into().into(),
            zero: false,
        }
    }

    pub fn constant(v: f64) -> Coef {
        Coef {
            repr: Repr::Expr(Arc::new(Expr::Num(v))),
            label: format!("{v:?}").into(),
            zero: v == 0.0,
        }
    }

    /// True only when the function is the literal constant 0.
    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, x: f64) -> std::result::Result<f64, EvalError> {
        match &self.repr {
            Repr::Expr(e) => e.eval(x),
            Repr::Native(f) => {
                let v = f(x);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(EvalError {
                        expr: self.label.to_string(),
                        x,
                        reason: "non-finite result",
                    })
                }
            }
        }
    }
}

impl fmt::Debug for Coef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Coef({})", self.label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelFamily {
    Brownian,
    BrownianDrift(f64),
    Gbm(f64),
    Cev(f64, f64),
    SquaredBessel(f64),
    InverseBessel3,
}

impl ModelFamily {
    /// Build from a name and parameter list as they appear in configs.
    pub fn from_name(name: &str, params: &[f64]) -> Result<ModelFamily> {
        let want = |n: usize| {
            if params.len() == n {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "family `{name}` takes {n} parameter(s), got {}",
                    params.len()
                )))
            }
        };
        let fam = match name {
            "brownian" => {
                want(0)?;
                ModelFamily::Brownian
            }
            "brownian-drift" => {
                want(1)?;
                ModelFamily::BrownianDrift(params[0])
            }
            "gbm" => {
                want(1)?;
                ModelFamily::Gbm(params[0])
            }
            "cev" => {
                want(2)?;
                ModelFamily::Cev(params[0], params[1])
            }
            "squared-bessel" => {
                want(1)?;
                ModelFamily::SquaredBessel(params[0])
            }
            "inverse-bessel3" => {
                want(0)?;
                ModelFamily::InverseBessel3
            }
            _ => return Err(Error::InvalidParameter(format!("unknown model family `{name}`"))),
        };
        Ok(fam)
    }

    pub fn name(&self) -> String {
        match self {
            ModelFamily::Brownian => "brownian".into(),
            ModelFamily::BrownianDrift(m) => format!("brownian-drift({m})"),
            ModelFamily::Gbm(s) => format!("gbm({s})"),
            ModelFamily::Cev(s, b) => format!("cev({s}, {b})"),
            ModelFamily::SquaredBessel(d) => format!("squared-bessel({d})"),
            ModelFamily::InverseBessel3 => "inverse-bessel3".into(),
        }
    }

    pub fn interval(&self) -> (f64, f64) {
        match self {
            ModelFamily::Brownian | ModelFamily::BrownianDrift(_) => (f64::NEG_INFINITY, f64::INFINITY),
            _ => (0.0, f64::INFINITY),
        }
    }
}

fn positive(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} must be positive, got {v}")))
    }
}

pub fn expand_family(f: &ModelFamily) -> Result<DiffusionSpec> {
    let (l, r) = f.interval();
    let (sigma, drift) = match *f {
        ModelFamily::Brownian => (Coef::constant(1.0), Coef::constant(0.0)),
        ModelFamily::BrownianDrift(mu) => {
            if !mu.is_finite() {
                return Err(Error::InvalidParameter(format!("drift must be finite, got {mu}")));
            }
            (Coef::constant(1.0), Coef::constant(mu))
        }
        ModelFamily::Gbm(s0) => {
            positive("sigma0", s0)?;
            (Coef::native(format!("{s0}*x"), move |x| s0 * x), Coef::constant(0.0))
        }
        ModelFamily::Cev(s0, beta) => {
            positive("sigma0", s0)?;
            if !beta.is_finite() {
                return Err(Error::InvalidParameter(format!("beta must be finite, got {beta}")));
            }
            (
                Coef::native(format!("{s0}*x^{beta}"), move |x| s0 * x.powf(beta)),
                Coef::constant(0.0),
            )
        }
        ModelFamily::SquaredBessel(delta) => {
            if !(delta >= 0.0 && delta.is_finite()) {
                return Err(Error::InvalidParameter(format!("delta must be >= 0, got {delta}")));
            }
            (Coef::native("2*sqrt(x)", |x| 2.0 * x.sqrt()), Coef::constant(delta))
        }
        ModelFamily::InverseBessel3 => (Coef::native("x^2", |x| x * x), Coef::constant(0.0)),
    };
    DiffusionSpec::new(f.name(), sigma, drift, l, r)
}
