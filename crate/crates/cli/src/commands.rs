use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use diffkit::diffusion::{ClassificationReport, EndpointReport};
use diffkit::optstop::{self, Finiteness, StoppingProblem};
use diffkit::pde::{self, FarField, Grid1D, PricingProblem};
use diffkit::potentials::FundamentalPair;
use diffkit::simulate::exit_survival;
use diffkit::transforms::{recurrent_alpha_atom, recurrent_alpha_measure, stationary_distribution, MeasureSpec};
use diffkit::{Coef, DiffusionSpec, Limit, ScaleSpeed};
use serde_json::{json, Map, Number, Value};

use crate::config::{farfield, ConfigError, RunConfig};

/// Successful run; the variant selects the exit code.
pub enum Outcome {
    Done(Value),
    Inconclusive(Value),
    Infinite(Value),
}

pub enum Failure {
    Config(String),
    Run(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<diffkit::Error> for Failure {
    fn from(e: diffkit::Error) -> Self {
        match e {
            diffkit::Error::Parse(_) | diffkit::Error::InvalidParameter(_) | diffkit::Error::Precondition(_) => {
                Failure::Config(e.to_string())
            }
            _ => Failure::Run(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// 17 significant digits; non-finite values become strings.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        Value::Number(serde_json::from_str::<Number>(&format!("{x:.16e}")).expect("formatted float parses"))
    } else if x.is_nan() {
        Value::String("nan".into())
    } else if x > 0.0 {
        Value::String("inf".into())
    } else {
        Value::String("-inf".into())
    }
}

fn block<'a, T>(b: &'a Option<T>, name: &str) -> Result<&'a T, Failure> {
    b.as_ref().ok_or_else(|| Failure::Config(format!("config needs a `{name}` block for this command")))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json(dir: &Path, name: &str, v: &Value) -> Result<(), Failure> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, v).map_err(|e| Failure::Run(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn limit(l: &Limit) -> Value {
    match l {
        Limit::Finite(v) => num(*v),
        Limit::PlusInfinity => json!("inf"),
        Limit::MinusInfinity => json!("-inf"),
        Limit::Inconclusive => json!("inconclusive"),
    }
}

fn endpoint(e: &EndpointReport) -> Value {
    json!({
        "point": num(e.point),
        "scale_limit": limit(&e.scale_limit),
        "speed_integral_finite": e.speed_integral_finite.as_str(),
        "accessible": e.accessible.as_str(),
    })
}

fn report_json(spec: &DiffusionSpec, r: &ClassificationReport) -> Value {
    let mut m = Map::new();
    m.insert("model".into(), json!(spec.name()));
    m.insert("natural_scale".into(), json!(r.natural_scale));
    m.insert("left".into(), endpoint(&r.left));
    m.insert("right".into(), endpoint(&r.right));
    if let Some(v) = r.martingale {
        m.insert("martingale".into(), json!(v.as_str()));
    }
    if let Some(v) = r.strictly_positive {
        m.insert("strictly_positive".into(), json!(v.as_str()));
    }
    Value::Object(m)
}

pub fn classify(ctx: &Context) -> Result<Outcome, Failure> {
    let spec = ctx.cfg.model.spec()?;
    let ss = ScaleSpeed::new(&spec)?;
    let rep = ss.classify();
    let v = report_json(&spec, rep);
    write_json(&ctx.out, "classify.json", &v)?;
    Ok(if rep.any_inconclusive() { Outcome::Inconclusive(v) } else { Outcome::Done(v) })
}

pub fn exit_dist(ctx: &Context) -> Result<Outcome, Failure> {
    let spec = ctx.cfg.model.spec()?;
    let ex = block(&ctx.cfg.exit, "exit")?;
    let sim = block(&ctx.cfg.sim, "sim")?.to_sim(ctx.seed, ctx.threads)?;
    if ex.t.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(Failure::Config("exit.t must be finite and >= 0".into()));
    }
    let ss = Arc::new(ScaleSpeed::new(&spec)?);
    let mut w = create(&ctx.out, "exit_dist.csv")?;
    writeln!(w, "t,estimate,se")?;
    let mut rows = Vec::new();
    for &t in &ex.t {
        let (est, se) = if t == 0.0 {
            (1.0, 0.0)
        } else {
            let e = exit_survival(&spec, &ss, ex.x, ex.y, t, &sim)?;
            (e.value, e.se)
        };
        writeln!(w, "{t:.16e},{est:.16e},{se:.16e}")?;
        rows.push(json!({"t": num(t), "estimate": num(est), "se": num(se)}));
    }
    w.flush()?;
    Ok(Outcome::Done(json!({ "rows": rows, "paths": sim.n_paths, "dt": num(sim.dt), "seed": sim.seed })))
}

fn pricing(ctx: &Context) -> Result<(PricingProblem, Grid1D, &crate::config::PdeBlock), Failure> {
    let spec = ctx.cfg.model.spec()?;
    let b = block(&ctx.cfg.pde, "pde")?;
    let problem = PricingProblem::new(&spec, Coef::parse(&b.payoff).map_err(diffkit::Error::from)?, b.horizon, b.spot)?;
    let grid = Grid1D::log_uniform(
        b.spot,
        b.x_min.unwrap_or(1e-4 * b.spot),
        b.x_max.unwrap_or(1e4 * b.spot),
        b.nx,
        b.nt,
        b.horizon,
    )?;
    Ok((problem, grid, b))
}

pub fn price_eu(ctx: &Context) -> Result<Outcome, Failure> {
    let (problem, grid, b) = pricing(ctx)?;
    let mut w = create(&ctx.out, "surface.csv")?;
    let price = if problem.horizon == 0.0 {
        writeln!(w, "t,x,w,v")?;
        for &x in &grid.xs {
            let g = problem.payoff.eval(x).map_err(diffkit::Error::from)?;
            writeln!(w, "{:.16e},{x:.16e},{:.16e},{g:.16e}", 0.0, g / x)?;
        }
        problem.payoff.eval(b.spot).map_err(diffkit::Error::from)?
    } else {
        let wf = pde::solve_transformed(&problem, &grid)?;
        wf.write_surface(None, b.surface_stride, &mut w)?;
        b.spot * wf.last()[grid.spot_index()]
    };
    w.flush()?;
    let v = json!({
        "price": num(price),
        "spot": num(b.spot),
        "horizon": num(b.horizon),
        "strict_local_martingale": problem.strict_local_martingale.as_str(),
        "grid": {"nx": b.nx, "nt": b.nt, "x_min": num(grid.xs[0]), "x_max": num(*grid.xs.last().unwrap())},
    });
    write_json(&ctx.out, "price_eu.json", &v)?;
    Ok(Outcome::Done(v))
}

pub fn demo_nonuniqueness(ctx: &Context) -> Result<Outcome, Failure> {
    let (problem, grid, b) = pricing(ctx)?;
    let ff = farfield(b.farfield.as_ref())?;
    let (transformed, _) = pde::price_european(&problem, &grid)?;
    let naive = if problem.horizon == 0.0 {
        transformed
    } else {
        pde::solve_naive(&problem, &grid, ff)?.at(b.spot)
    };
    let farfield = match ff {
        FarField::PayoffLinear => json!("payoff-linear"),
        FarField::Dirichlet(v) => json!({ "dirichlet": num(v) }),
    };
    let v = json!({
        "naive": num(naive),
        "transformed": num(transformed),
        "gap": num(naive - transformed),
        "farfield": farfield,
        "strict_local_martingale": problem.strict_local_martingale.as_str(),
    });
    write_json(&ctx.out, "nonuniqueness.json", &v)?;
    Ok(Outcome::Done(v))
}

pub fn price_am(ctx: &Context) -> Result<Outcome, Failure> {
    let spec = ctx.cfg.model.spec()?;
    let b = block(&ctx.cfg.optstop, "optstop")?;
    let g = Coef::parse(&b.payoff).map_err(diffkit::Error::from)?;
    let problem = StoppingProblem::new(&spec, g, b.lambda, b.anchor)?.with_nodes(b.nodes)?;
    let sol = optstop::solve(&problem)?;
    let fin = &sol.finiteness;
    let seq = |s: &[(f64, f64)]| -> Value { s.iter().map(|(x, lr)| json!([num(*x), num(*lr)])).collect() };
    let finiteness = json!({
        "verdict": match fin.verdict {
            Finiteness::Finite => "finite",
            Finiteness::Infinite => "infinite",
            Finiteness::Inconclusive => "inconclusive",
        },
        "witness": fin.witness.map(|s| json!(format!("{s:?}").to_lowercase())).unwrap_or(Value::Null),
        "left_log_ratios": seq(&fin.left_sequence),
        "right_log_ratios": seq(&fin.right_sequence),
    });
    if sol.is_infinite() {
        let v = json!({ "value": "inf", "finiteness": finiteness });
        write_json(&ctx.out, "price_am.json", &v)?;
        return Ok(Outcome::Infinite(v));
    }
    let mut w = create(&ctx.out, "stopping.csv")?;
    sol.write_csv(&mut w)?;
    w.flush()?;
    let anchor = problem.y;
    let v = json!({
        "value": num(sol.value_at(anchor)?),
        "at": num(anchor),
        "region": sol.region.iter().map(|(a, b)| json!([num(*a), num(*b)])).collect::<Value>(),
        "finiteness": finiteness,
        "flagged": sol.flagged,
        "nodes": sol.xs.len(),
    });
    write_json(&ctx.out, "price_am.json", &v)?;
    Ok(Outcome::Done(v))
}

pub fn stationary(ctx: &Context) -> Result<Outcome, Failure> {
    let spec = ctx.cfg.model.spec()?;
    let b = block(&ctx.cfg.stationary, "stationary")?;
    let ss = Arc::new(ScaleSpeed::new(&spec)?);
    let fp = Arc::new(FundamentalPair::new(&spec, &ss, b.alpha, Default::default())?);
    let t = match b.transform.as_str() {
        "alpha-atom" => {
            let y = b.y.ok_or_else(|| Failure::Config("stationary.y is required for alpha-atom".into()))?;
            recurrent_alpha_atom(&spec, &ss, &fp, y)?
        }
        "alpha-measure" => {
            let atoms = b
                .atoms
                .as_ref()
                .ok_or_else(|| Failure::Config("stationary.atoms is required for alpha-measure".into()))?;
            let mu = MeasureSpec::new(atoms.iter().map(|a| (a[0], a[1])).collect())?;
            recurrent_alpha_measure(&spec, &ss, &fp, &mu)?
        }
        other => {
            return Err(Failure::Config(format!(
                "stationary.transform must be alpha-atom or alpha-measure, got `{other}`"
            )))
        }
    };
    let (l, r) = spec.interval();
    let lo = b.x_min.or(l.is_finite().then_some(l)).ok_or_else(|| Failure::Config("stationary.x_min is required on an unbounded interval".into()))?;
    let hi = b.x_max.or(r.is_finite().then_some(r)).ok_or_else(|| Failure::Config("stationary.x_max is required on an unbounded interval".into()))?;
    if !(lo < hi) || b.points < 2 {
        return Err(Failure::Config("stationary grid needs x_min < x_max and points >= 2".into()));
    }
    let dens = stationary_distribution(&t, &ss)?;
    let mut w = create(&ctx.out, "stationary.csv")?;
    writeln!(w, "x,pi")?;
    let n = b.points;
    for i in 0..n {
        let mut x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        // keep the grid inside an open interval
        if x <= l || x >= r {
            x = if x <= l { lo + (hi - lo) * 1e-9 } else { hi - (hi - lo) * 1e-9 };
        }
        writeln!(w, "{x:.16e},{:.16e}", dens.pdf(x)?)?;
    }
    w.flush()?;
    Ok(Outcome::Done(json!({
        "transform": b.transform,
        "alpha": num(b.alpha),
        "normalizer": num(dens.normalizer),
        "points": n,
    })))
}
