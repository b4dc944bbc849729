use pemrisk::stl::{
    eval_agm, eval_classical, parse_formula, rank_trajectories, robustness, Formula, Interval, Metric,
    Predicate, Trace,
};
use proptest::prelude::*;

fn dist_trace(values: Vec<f64>) -> Trace {
    Trace::from_channel("dist_m", values, 0.05).unwrap()
}

fn always_dist(n: usize, bound: f64) -> Formula {
    Formula::always(Interval::new(0, n - 1).unwrap(), Formula::pred(Predicate::geq("dist_m", bound).unwrap()))
}

proptest! {
    #[test]
    fn always_is_the_minimum_margin(values in prop::collection::vec(-50.0f64..50.0, 1..=100), bound in -5.0f64..5.0) {
        let n = values.len();
        let expected = values.iter().map(|v| v - bound).fold(f64::INFINITY, f64::min);
        let got = eval_classical(&dist_trace(values), &always_dist(n, bound), 0).unwrap();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn negation_is_exact(
        values in prop::collection::vec(-20.0f64..20.0, 6..=30),
        lo in 0usize..3,
        width in 0usize..3,
        t in 0usize..3,
        src in prop::sample::select(vec![
            "(always {lo} {hi} (geq dist_m 1.5))",
            "(eventually {lo} {hi} (leq dist_m 0.5))",
            "(until {lo} {hi} (geq dist_m -3) (leq dist_m 2))",
            "(and (always {lo} {hi} (geq dist_m 0)) (eventually 0 1 (geq dist_m 4)))",
        ]),
    ) {
        let text = src.replace("{lo}", &lo.to_string()).replace("{hi}", &(lo + width).to_string());
        let f = parse_formula(&text).unwrap();
        let trace = dist_trace(values);
        let pos = eval_classical(&trace, &f, t).unwrap();
        let neg = eval_classical(&trace, &Formula::not(f), t).unwrap();
        prop_assert_eq!(neg, -pos);
    }

    #[test]
    fn constant_margin_is_a_fixed_point(v in -1.0f64..1.0, n in 1usize..40) {
        // Unit scale makes the margin its own normalized value.
        let p = Predicate::geq("dist_m", 0.0).unwrap().with_scale(1.0).unwrap();
        let f = Formula::always(Interval::new(0, n - 1).unwrap(), Formula::pred(p));
        let trace = dist_trace(vec![v; n]);
        prop_assert_eq!(eval_classical(&trace, &f, 0).unwrap(), v);
        prop_assert!((eval_agm(&trace, &f, 0).unwrap() - v).abs() < 1e-12);
    }

    #[test]
    fn ranking_is_a_monotone_permutation(rows in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 5), 0..25)) {
        let traces: Vec<Trace> = rows.into_iter().map(dist_trace).collect();
        let f = always_dist(5, 2.0);
        let ranked = rank_trajectories(&traces, &f, &Metric::Classical).unwrap();
        let mut idx: Vec<usize> = ranked.iter().map(|r| r.0).collect();
        idx.sort_unstable();
        prop_assert_eq!(idx, (0..traces.len()).collect::<Vec<_>>());
        for w in ranked.windows(2) {
            prop_assert!(w[0].1 < w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
    }
}

/// Margins 50 m above the bound except for the stated dips.
fn with_dips(n: usize, dips: &[(usize, f64)]) -> Vec<f64> {
    let mut v = vec![52.0; n];
    for &(i, margin) in dips {
        v[i] = 2.0 + margin;
    }
    v
}

#[test]
fn each_metric_picks_a_different_least_safe_trace() {
    let n = 20;
    let deep = with_dips(n, &[(7, 1.0)]);
    let shallow = vec![5.0; n];
    let intermediate = with_dips(n, &(5..15).map(|i| (i, 1.2)).collect::<Vec<_>>());
    let traces = vec![dist_trace(deep), dist_trace(shallow), dist_trace(intermediate)];
    let f = always_dist(n, 2.0);
    let leader = |m: Metric| rank_trajectories(&traces, &f, &m).unwrap()[0].0;
    assert_eq!(leader(Metric::Classical), 0);
    assert_eq!(leader(Metric::Agm), 1);
    assert_eq!(leader(Metric::Smooth { k: 10.0 }), 2);
}

#[test]
fn safety_property_parses_and_evaluates() {
    let f = parse_formula("(always 0 2 (geq dist_m 2.0))").unwrap();
    let r = robustness(&dist_trace(vec![3.0, 2.5, 4.0]), &f, &Metric::Classical).unwrap();
    assert_eq!(r, 0.5);
}
