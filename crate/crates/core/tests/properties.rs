use std::sync::{Arc, OnceLock};

use diffkit::exec::map_indexed;
use diffkit::optstop::concave_majorant;
use diffkit::potentials::{fundamental_solutions, FundamentalPair};
use diffkit::stats::ks_statistic;
use diffkit::{expand_family, parse_expr, Coef, ModelFamily, ScaleSpeed};
use proptest::prelude::*;

fn bm_pair() -> &'static FundamentalPair {
    static FP: OnceLock<FundamentalPair> = OnceLock::new();
    FP.get_or_init(|| {
        let spec = expand_family(&ModelFamily::Brownian).unwrap();
        let ss = Arc::new(ScaleSpeed::new(&spec).unwrap());
        fundamental_solutions(&spec, &ss, 1.0).unwrap()
    })
}

fn gbm_pair() -> &'static FundamentalPair {
    static FP: OnceLock<FundamentalPair> = OnceLock::new();
    FP.get_or_init(|| {
        let spec = expand_family(&ModelFamily::Gbm(0.4)).unwrap();
        let ss = Arc::new(ScaleSpeed::new(&spec).unwrap());
        fundamental_solutions(&spec, &ss, 0.7).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn majorant_dominates_and_is_concave(ys in prop::collection::vec(-5.0f64..5.0, 3..60)) {
        let n = ys.len();
        let pts: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, &y)| ((i as f64 + 0.5) / n as f64, y)).collect();
        let m = concave_majorant(&pts, None, None).unwrap();
        for &(z, y) in &pts {
            prop_assert!(m.eval(z) >= y - 1e-12);
        }
        // knots are data points, and slopes decrease
        prop_assert!(m.knots.iter().all(|k| pts.contains(k)));
        let slopes: Vec<f64> = m.knots.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect();
        prop_assert!(slopes.windows(2).all(|s| s[1] < s[0] + 1e-9));
    }

    #[test]
    fn brownian_potential_matches_closed_form(x in -4.0f64..4.0, y in -4.0f64..4.0) {
        let k = 2f64.sqrt();
        let exact = (-k * (x - y).abs()).exp() / k;
        prop_assert!((bm_pair().resolvent_density(x, y).unwrap() - exact).abs() < 1e-6);
    }

    #[test]
    fn potential_is_symmetric(x in 0.05f64..20.0, y in 0.05f64..20.0) {
        let fp = gbm_pair();
        let (a, b) = (fp.u(x, y), fp.u(y, x));
        prop_assert!((a - b).abs() <= 1e-12 * a.abs());
        // decreasing away from the diagonal
        prop_assert!(fp.u(x, x) >= a * (1.0 - 1e-9));
    }

    #[test]
    fn ks_is_a_distance(xs in prop::collection::vec(-3.0f64..3.0, 1..200)) {
        let d = ks_statistic(&xs, |v| ((v + 3.0) / 6.0).clamp(0.0, 1.0));
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!(d >= 0.5 / xs.len() as f64 - 1e-12);
    }

    #[test]
    fn indexed_map_ignores_worker_count(n in 0usize..300, threads in 1usize..5) {
        let f = |i: usize| (i as f64).sin().to_bits();
        prop_assert_eq!(map_indexed(n, Some(threads), f), (0..n).map(f).collect::<Vec<_>>());
    }

    #[test]
    fn affine_expressions_evaluate(a in -10.0f64..10.0, b in -10.0f64..10.0, x in -10.0f64..10.0) {
        let src = format!("({a:?})*x + ({b:?})");
        let c = Coef::parse(&src).unwrap();
        prop_assert!((c.eval(x).unwrap() - (a * x + b)).abs() <= 1e-12 * (1.0 + (a * x).abs() + b.abs()));
        // printing and reparsing preserves the value
        let e = parse_expr(&src).unwrap();
        let again = Coef::parse(&e.to_string()).unwrap();
        prop_assert_eq!(again.eval(x).unwrap().to_bits(), c.eval(x).unwrap().to_bits());
    }
}
