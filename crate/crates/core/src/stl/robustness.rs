use serde::{Deserialize, Serialize};

use super::formula::{Formula, Predicate};
use super::trace::Trace;
use crate::error::{Error, Result};

/// Default sharpness for the smooth-cumulative semantics.
pub const DEFAULT_SHARPNESS: f64 = 10.0;

/// Robustness semantics selector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum Metric {
    Classical,
    /// Arithmetic-geometric mean over margins normalized by predicate scale.
    Agm,
    /// Log-sum-exp softmin for conjunctions, positive-part sums for
    /// `eventually`.
    Smooth {
        #[serde(default = "default_sharpness")]
        k: f64,
    },
}

fn default_sharpness() -> f64 {
    DEFAULT_SHARPNESS
}

impl Default for Metric {
    fn default() -> Self {
        Metric::Classical
    }
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Classical => "classical",
            Metric::Agm => "agm",
            Metric::Smooth { .. } => "smooth",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Metric::Smooth { k } if !(k > 0.0 && k.is_finite()) => {
                Err(Error::Parameter(format!("smooth sharpness must be positive, got {k}")))
            }
            _ => Ok(()),
        }
    }

    fn top(&self) -> f64 {
        match self {
            Metric::Agm => 1.0,
            _ => f64::INFINITY,
        }
    }

    fn conj(&self, values: &[f64]) -> f64 {
        match *self {
            Metric::Classical => values.iter().copied().fold(f64::INFINITY, f64::min),
            Metric::Agm => agm_and(values),
            Metric::Smooth { k } => softmin(values, k),
        }
    }

    fn disj(&self, values: &[f64]) -> f64 {
        match *self {
            Metric::Classical => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Metric::Agm => agm_or(values),
            Metric::Smooth { k } => cumulative_or(values, k),
        }
    }

    fn atom(&self, p: &Predicate, value: f64) -> Result<f64> {
        if !value.is_finite() {
            return Err(Error::Schema(format!(
                "channel `{}` holds a non-finite value",
                p.channel
            )));
        }
        let m = p.margin(value);
        match self {
            Metric::Agm => {
                let r = m / p.scale();
                if !(-1.0..=1.0).contains(&r) {
                    return Err(Error::Normalization { label: p.label.clone(), value: r });
                }
                Ok(r)
            }
            _ => Ok(m),
        }
    }
}

/// `-(1/k) ln sum exp(-k r_i)`; never exceeds the minimum.
pub fn softmin(values: &[f64], k: f64) -> f64 {
    let m = values.iter().copied().fold(f64::INFINITY, f64::min);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = values.iter().map(|&r| (-k * (r - m)).exp()).sum();
    m - s.ln() / k
}

/// `(1/k) ln sum exp(k r_i)`; never below the maximum.
pub fn softmax(values: &[f64], k: f64) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = values.iter().map(|&r| (k * (r - m)).exp()).sum();
    m + s.ln() / k
}

/// Sum of positive parts when any value is positive, softmax otherwise.
pub fn cumulative_or(values: &[f64], k: f64) -> f64 {
    if values.iter().any(|&r| r > 0.0) {
        values.iter().map(|&r| r.max(0.0)).sum()
    } else {
        softmax(values, k)
    }
}

/// AGM conjunction over normalized values in `[-1, 1]`.
pub fn agm_and(values: &[f64]) -> f64 {
    let m = values.len() as f64;
    if values.iter().all(|&r| r > 0.0) {
        let mean_log = values.iter().map(|r| r.ln_1p()).sum::<f64>() / m;
        mean_log.exp_m1()
    } else {
        values.iter().filter(|&&r| r <= 0.0).sum::<f64>() / m
    }
}

/// AGM disjunction, the dual of [`agm_and`].
pub fn agm_or(values: &[f64]) -> f64 {
    let negated: Vec<f64> = values.iter().map(|r| -r).collect();
    -agm_and(&negated)
}

fn eval_at(trace: &Trace, f: &Formula, t: usize, metric: &Metric) -> Result<f64> {
    match f {
        Formula::True => Ok(metric.top()),
        Formula::Pred(p) => metric.atom(p, trace.channel(&p.channel)?[t]),
        Formula::Not(a) => Ok(-eval_at(trace, a, t, metric)?),
        Formula::And(a, b) => {
            let v = [eval_at(trace, a, t, metric)?, eval_at(trace, b, t, metric)?];
            Ok(metric.conj(&v))
        }
        Formula::Or(a, b) => {
            let v = [-eval_at(trace, a, t, metric)?, -eval_at(trace, b, t, metric)?];
            Ok(-metric.conj(&v))
        }
        Formula::Always(i, a) => {
            let v = window(trace, a, t + i.lo(), t + i.hi(), metric)?;
            Ok(metric.conj(&v))
        }
        Formula::Eventually(i, a) => {
            let v = window(trace, a, t + i.lo(), t + i.hi(), metric)?;
            Ok(metric.disj(&v))
        }
        Formula::Until(i, a, b) => {
            let lhs = window(trace, a, t, t + i.hi(), metric)?;
            let mut candidates = Vec::with_capacity(i.hi() - i.lo() + 1);
            for tp in t + i.lo()..=t + i.hi() {
                let held = metric.conj(&lhs[..=tp - t]);
                let goal = eval_at(trace, b, tp, metric)?;
                candidates.push(metric.conj(&[goal, held]));
            }
            Ok(metric.disj(&candidates))
        }
    }
}

fn window(trace: &Trace, f: &Formula, from: usize, to: usize, metric: &Metric) -> Result<Vec<f64>> {
    (from..=to).map(|s| eval_at(trace, f, s, metric)).collect()
}

/// Robustness of `formula` at step `t` under `metric`.
pub fn robustness_at(trace: &Trace, formula: &Formula, t: usize, metric: &Metric) -> Result<f64> {
    metric.validate()?;
    let needed = t + formula.lookahead();
    if needed >= trace.len() {
        return Err(Error::Horizon { needed, len: trace.len() });
    }
    eval_at(trace, formula, t, metric)
}

/// Robustness at step 0.
pub fn robustness(trace: &Trace, formula: &Formula, metric: &Metric) -> Result<f64> {
    robustness_at(trace, formula, 0, metric)
}

pub fn eval_classical(trace: &Trace, formula: &Formula, t: usize) -> Result<f64> {
    robustness_at(trace, formula, t, &Metric::Classical)
}

pub fn eval_agm(trace: &Trace, formula: &Formula, t: usize) -> Result<f64> {
    robustness_at(trace, formula, t, &Metric::Agm)
}

pub fn eval_smooth(trace: &Trace, formula: &Formula, t: usize, k: f64) -> Result<f64> {
    robustness_at(trace, formula, t, &Metric::Smooth { k })
}

/// Stable ascending sort by robustness at step 0; the first entry is the
/// least safe trace.
pub fn rank_trajectories(
    traces: &[Trace],
    formula: &Formula,
    metric: &Metric,
) -> Result<Vec<(usize, f64)>> {
    let mut ranked = traces
        .iter()
        .enumerate()
        .map(|(i, tr)| robustness(tr, formula, metric).map(|r| (i, r)))
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stl::{parse_formula, Interval, Predicate};

    fn dist(values: &[f64]) -> Trace {
        Trace::from_channel("dist", values.to_vec(), 0.05).unwrap()
    }

    fn always(lo: usize, hi: usize, bound: f64) -> Formula {
        Formula::always(
            Interval::new(lo, hi).unwrap(),
            Formula::pred(Predicate::geq("dist", bound).unwrap()),
        )
    }

    /// Predicate with unit scale, so AGM sees raw margins.
    fn unit_pred() -> Formula {
        Formula::pred(Predicate::geq("dist", 0.0).unwrap().with_scale(1.0).unwrap())
    }

    #[test]
    fn classical_examples() {
        assert!((eval_classical(&dist(&[3.0, 2.5, 4.0]), &always(0, 2, 2.0), 0).unwrap() - 0.5).abs() < 1e-15);
        assert!((eval_classical(&dist(&[3.0, 1.5]), &always(0, 1, 2.0), 0).unwrap() + 0.5).abs() < 1e-15);
        let ev = Formula::eventually(
            Interval::new(0, 2).unwrap(),
            Formula::pred(Predicate::geq("dist", 2.0).unwrap()),
        );
        assert!((eval_classical(&dist(&[1.0, 1.5, 2.5]), &ev, 0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn horizon_and_schema_errors() {
        let err = eval_classical(&dist(&[3.0, 2.0]), &always(0, 2, 2.0), 0).unwrap_err();
        assert!(matches!(err, Error::Horizon { needed: 2, len: 2 }));
        assert!(matches!(
            eval_classical(&dist(&[3.0, 2.0, 1.0]), &always(0, 1, 2.0), 1),
            Ok(_)
        ));
        let f = parse_formula("(geq speed 1)").unwrap();
        assert!(matches!(eval_classical(&dist(&[1.0]), &f, 0), Err(Error::Schema(_))));
    }

    #[test]
    fn agm_examples() {
        let f = Formula::always(Interval::new(0, 2).unwrap(), unit_pred());
        let r = eval_agm(&dist(&[0.5, 0.5, 0.5]), &f, 0).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
        let r = eval_agm(&dist(&[0.5, -0.5, -0.1]), &f, 0).unwrap();
        assert!((r + 0.2).abs() < 1e-15);
        let f2 = Formula::always(Interval::new(0, 1).unwrap(), unit_pred());
        let r = eval_agm(&dist(&[0.2, 0.8]), &f2, 0).unwrap();
        assert!((r - ((1.2f64 * 1.8).sqrt() - 1.0)).abs() < 1e-15);
        assert!((r - 0.4697).abs() < 1e-4);
    }

    #[test]
    fn agm_rejects_unnormalized_margin() {
        let f = Formula::always(Interval::new(0, 1).unwrap(), unit_pred());
        assert!(matches!(
            eval_agm(&dist(&[0.5, 1.5]), &f, 0),
            Err(Error::Normalization { .. })
        ));
    }

    #[test]
    fn agm_or_is_dual() {
        assert!((agm_or(&[-0.5, -0.5]) + 0.5).abs() < 1e-15);
        assert!((agm_or(&[0.4, -0.2]) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn smooth_examples() {
        let f = Formula::always(Interval::new(0, 2).unwrap(), unit_pred());
        let r = eval_smooth(&dist(&[1.0, 1.0, 1.0]), &f, 0, 10.0).unwrap();
        assert!((r - (1.0 - 3f64.ln() / 10.0)).abs() < 1e-14);
        assert!((r - 0.8901).abs() < 1e-4);

        let f2 = Formula::always(Interval::new(0, 1).unwrap(), unit_pred());
        let sharp = eval_smooth(&dist(&[0.5, 2.0]), &f2, 0, 1e4).unwrap();
        assert!((sharp - 0.5).abs() < 1e-9);

        let ev = Formula::eventually(Interval::new(0, 2).unwrap(), unit_pred());
        let r = eval_smooth(&dist(&[0.2, 0.3, -1.0]), &ev, 0, 10.0).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
        // all non-positive falls back to softmax
        let r = eval_smooth(&dist(&[-0.2, -0.3, -1.0]), &ev, 0, 10.0).unwrap();
        assert!((r - softmax(&[-0.2, -0.3, -1.0], 10.0)).abs() < 1e-15);
    }

    #[test]
    fn smooth_rejects_bad_sharpness() {
        let f = always(0, 0, 0.0);
        assert!(matches!(eval_smooth(&dist(&[1.0]), &f, 0, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(eval_smooth(&dist(&[1.0]), &f, 0, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn until_classical() {
        // a until b: a = x >= 0, b = x >= 5
        let f = parse_formula("(until 0 3 (geq x 0) (geq x 5))").unwrap();
        let tr = Trace::from_channel("x", vec![1.0, 2.0, 6.0, -1.0], 0.1).unwrap();
        // t'=2: min(goal 1, min(1,2,6)) = 1
        assert_eq!(eval_classical(&tr, &f, 0).unwrap(), 1.0);
        let tr = Trace::from_channel("x", vec![1.0, -2.0, 6.0, 7.0], 0.1).unwrap();
        // every candidate after the dip inherits -2; t'=0 gives min(-4, 1)
        assert_eq!(eval_classical(&tr, &f, 0).unwrap(), -2.0);
    }

    #[test]
    fn until_under_other_metrics_is_defined() {
        let f = parse_formula("(until 0 2 (geq x 0 10) (geq x 5 10))").unwrap();
        let tr = Trace::from_channel("x", vec![1.0, 2.0, 6.0], 0.1).unwrap();
        let c = eval_classical(&tr, &f, 0).unwrap();
        let a = eval_agm(&tr, &f, 0).unwrap();
        let s = eval_smooth(&tr, &f, 0, 10.0).unwrap();
        assert!(c > 0.0 && a > 0.0 && s.is_finite());
    }

    #[test]
    fn true_and_or() {
        let tr = dist(&[3.0]);
        let t = parse_formula("(and true (geq dist 2))").unwrap();
        assert_eq!(eval_classical(&tr, &t, 0).unwrap(), 1.0);
        assert_eq!(eval_smooth(&tr, &t, 0, 10.0).unwrap(), 1.0);
        let o = parse_formula("(or (geq dist 5) (geq dist 2.5))").unwrap();
        assert_eq!(eval_classical(&tr, &o, 0).unwrap(), 0.5);
    }

    #[test]
    fn ranking_examples() {
        let f = always(0, 0, 0.0);
        let traces: Vec<Trace> = [0.5, -0.1, 0.2].iter().map(|&v| dist(&[v])).collect();
        let order: Vec<usize> = rank_trajectories(&traces, &f, &Metric::Classical)
            .unwrap()
            .into_iter()
            .map(|(i, _)| i)
            .collect();
        assert_eq!(order, vec![1, 2, 0]);

        let equal: Vec<Trace> = (0..5).map(|_| dist(&[1.0])).collect();
        let order: Vec<usize> = rank_trajectories(&equal, &f, &Metric::Classical)
            .unwrap()
            .into_iter()
            .map(|(i, _)| i)
            .collect();
        assert_eq!(order, vec![0, 1, 2, 3, 4]);
    }
}
