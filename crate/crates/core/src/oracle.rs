//! Exhaustive enumeration over detection sequences.
//!
//! Dynamics are deterministic given the actions, so the failure probability
//! of a short-horizon scenario is a finite sum over all `2^(T-1)` action
//! sequences. Masses are accumulated in the log domain.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::LogSumExp;
use crate::sim::{realized, states_trace, step, Action, ScenarioConfig, SimState, StatePolicy};
use crate::stl::{robustness, Formula, Metric};

/// Largest horizon `exact_mu` accepts.
pub const HARD_HORIZON_CAP: usize = 20;
/// Largest horizon for expectation and perfect-proposal computations.
pub const DEFAULT_HORIZON_CAP: usize = 14;

/// Prefix bits used to split the sequence space across workers.
const SPLIT_BITS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerationResult {
    pub mu: f64,
    pub log10_mu: f64,
    pub n_fail_sequences: u64,
    pub n_total: u64,
}

/// One enumerated action sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRow {
    pub actions: Vec<bool>,
    pub log_p: f64,
    pub robustness: f64,
}

struct Leaf<'a> {
    actions: &'a [bool],
    log_p: f64,
    log_q: f64,
    robustness: f64,
}

struct Walk<'a> {
    cfg: &'a ScenarioConfig,
    target: &'a dyn StatePolicy,
    proposal: Option<&'a dyn StatePolicy>,
    formula: &'a Formula,
    metric: &'a Metric,
}

impl Walk<'_> {
    #[allow(clippy::too_many_arguments)]
    fn dfs<A>(
        &self,
        states: &mut Vec<SimState>,
        actions: &mut Vec<bool>,
        log_p: f64,
        log_q: f64,
        acc: &mut A,
        visit: &(dyn Fn(&mut A, &Leaf) + Sync),
    ) -> Result<()> {
        if actions.len() + 1 == self.cfg.horizon {
            let r = robustness(&states_trace(states, self.cfg.dt), self.formula, self.metric)?;
            visit(acc, &Leaf { actions, log_p, log_q, robustness: r });
            return Ok(());
        }
        let s = *states.last().expect("nonempty");
        let p = self.target.detect_probability(&s)?;
        let q = match self.proposal {
            Some(pol) => pol.detect_probability(&s)?,
            None => p,
        };
        for detected in [false, true] {
            states.push(step(&s, Action { detected }, self.cfg));
            actions.push(detected);
            self.dfs(
                states,
                actions,
                log_p + realized(p, detected).ln(),
                log_q + realized(q, detected).ln(),
                acc,
                visit,
            )?;
            actions.pop();
            states.pop();
        }
        Ok(())
    }
}

/// Visits every action sequence. The space is split by prefix; partial
/// accumulators are merged in prefix order, so the result does not depend on
/// scheduling.
#[allow(clippy::too_many_arguments)]
fn enumerate<A: Send>(
    cfg: &ScenarioConfig,
    target: &dyn StatePolicy,
    proposal: Option<&dyn StatePolicy>,
    formula: &Formula,
    metric: &Metric,
    cap: usize,
    init: impl Fn() -> A + Sync,
    visit: &(dyn Fn(&mut A, &Leaf) + Sync),
    merge: impl Fn(&mut A, A),
) -> Result<A> {
    cfg.validate()?;
    if cfg.horizon > cap {
        return Err(Error::HorizonTooLarge { horizon: cfg.horizon, cap });
    }
    let walk = Walk {
        cfg,
        target,
        proposal,
        formula,
        metric,
    };
    let bits = SPLIT_BITS.min(cfg.horizon - 1);
    let parts: Vec<Result<A>> = (0..1usize << bits)
        .into_par_iter()
        .map(|prefix| {
            let mut acc = init();
            let mut states = vec![cfg.initial_state()];
            let mut actions = Vec::with_capacity(cfg.horizon - 1);
            let (mut log_p, mut log_q) = (0.0, 0.0);
            for b in (0..bits).rev() {
                let detected = (prefix >> b) & 1 == 1;
                let s = *states.last().expect("nonempty");
                let p = target.detect_probability(&s)?;
                let q = match proposal {
                    Some(pol) => pol.detect_probability(&s)?,
                    None => p,
                };
                log_p += realized(p, detected).ln();
                log_q += realized(q, detected).ln();
                states.push(step(&s, Action { detected }, cfg));
                actions.push(detected);
            }
            walk.dfs(&mut states, &mut actions, log_p, log_q, &mut acc, visit)?;
            Ok(acc)
        })
        .collect();
    let mut total = init();
    for part in parts {
        merge(&mut total, part?);
    }
    Ok(total)
}

#[derive(Default)]
struct FailMass {
    lse: LogSumExp,
    n_fail: u64,
}

fn fail_mass(
    cfg: &ScenarioConfig,
    target: &dyn StatePolicy,
    proposal: Option<&dyn StatePolicy>,
    formula: &Formula,
    metric: &Metric,
    gamma: f64,
    cap: usize,
    leaf_log_mass: fn(&Leaf) -> f64,
) -> Result<FailMass> {
    let visit = move |acc: &mut FailMass, leaf: &Leaf| {
        if leaf.robustness <= gamma {
            acc.lse.push(leaf_log_mass(leaf));
            acc.n_fail += 1;
        }
    };
    enumerate(cfg, target, proposal, formula, metric, cap, FailMass::default, &visit, |a, b| {
        a.lse.merge(&b.lse);
        a.n_fail += b.n_fail;
    })
}

fn to_result(log_mu: f64, n_fail: u64, horizon: usize) -> EnumerationResult {
    EnumerationResult {
        mu: log_mu.exp(),
        log10_mu: log_mu / std::f64::consts::LN_10,
        n_fail_sequences: n_fail,
        n_total: 1u64 << (horizon - 1),
    }
}

/// `mu = sum_tau p(tau) 1{r(tau) <= gamma}` over every action sequence.
pub fn exact_mu(
    target: &dyn StatePolicy,
    cfg: &ScenarioConfig,
    formula: &Formula,
    metric: &Metric,
    gamma: f64,
) -> Result<EnumerationResult> {
    let m = fail_mass(cfg, target, None, formula, metric, gamma, HARD_HORIZON_CAP, |l| l.log_p)?;
    Ok(to_result(m.lse.value(), m.n_fail, cfg.horizon))
}

/// Exact expectation of the importance-sampling estimator under `proposal`:
/// `sum_tau q(tau) 1{fail} w(tau)` with `w = p / q` formed in the log domain.
pub fn exact_is_expectation(
    target: &dyn StatePolicy,
    proposal: &dyn StatePolicy,
    cfg: &ScenarioConfig,
    formula: &Formula,
    metric: &Metric,
    gamma: f64,
) -> Result<f64> {
    let m = fail_mass(cfg, target, Some(proposal), formula, metric, gamma, DEFAULT_HORIZON_CAP, |l| {
        l.log_q + (l.log_p - l.log_q)
    })?;
    Ok(m.lse.value().exp())
}

/// Every sequence with its target log probability and robustness, in
/// lexicographic order (`false < true`).
pub fn enumerate_table(
    target: &dyn StatePolicy,
    cfg: &ScenarioConfig,
    formula: &Formula,
    metric: &Metric,
) -> Result<Vec<SequenceRow>> {
    let visit = |acc: &mut Vec<SequenceRow>, leaf: &Leaf| {
        acc.push(SequenceRow {
            actions: leaf.actions.to_vec(),
            log_p: leaf.log_p,
            robustness: leaf.robustness,
        });
    };
    enumerate(cfg, target, None, formula, metric, DEFAULT_HORIZON_CAP, Vec::new, &visit, |a, b| {
        a.extend(b)
    })
}

/// Perfect proposal `q*(tau) = p(tau) 1{fail} / mu`, restricted to its
/// support.
pub fn perfect_proposal_mass(
    target: &dyn StatePolicy,
    cfg: &ScenarioConfig,
    formula: &Formula,
    metric: &Metric,
    gamma: f64,
) -> Result<Vec<(Vec<bool>, f64)>> {
    let failing: Vec<SequenceRow> = enumerate_table(target, cfg, formula, metric)?
        .into_iter()
        .filter(|r| r.robustness <= gamma)
        .collect();
    let mut lse = LogSumExp::default();
    failing.iter().for_each(|r| lse.push(r.log_p));
    let log_mu = lse.value();
    if log_mu == f64::NEG_INFINITY {
        return Err(Error::UndefinedProposal);
    }
    Ok(failing.into_iter().map(|r| (r.actions, (r.log_p - log_mu).exp())).collect())
}

/// Expected target negative log-likelihood of a failure drawn from the
/// perfect proposal, `sum_tau q*(tau) (-ln p(tau))`.
pub fn perfect_proposal_nll(
    target: &dyn StatePolicy,
    cfg: &ScenarioConfig,
    formula: &Formula,
    metric: &Metric,
    gamma: f64,
) -> Result<f64> {
    let rows: Vec<SequenceRow> = enumerate_table(target, cfg, formula, metric)?
        .into_iter()
        .filter(|r| r.robustness <= gamma)
        .collect();
    let mut lse = LogSumExp::default();
    rows.iter().for_each(|r| lse.push(r.log_p));
    let log_mu = lse.value();
    if log_mu == f64::NEG_INFINITY {
        return Err(Error::UndefinedProposal);
    }
    Ok(rows.iter().map(|r| (r.log_p - log_mu).exp() * -r.log_p).sum())
}

/// Failure probability of an abstract process with `steps` independent
/// detections of probability `p_detect`, where `fails` decides each
/// detection pattern.
pub fn independent_steps_mu(p_detect: f64, steps: usize, fails: impl Fn(&[bool]) -> bool) -> Result<f64> {
    if steps > HARD_HORIZON_CAP {
        return Err(Error::HorizonTooLarge { horizon: steps, cap: HARD_HORIZON_CAP });
    }
    if !(0.0..=1.0).contains(&p_detect) {
        return Err(Error::Argument(format!("detection probability {p_detect} outside [0, 1]")));
    }
    let (lp_hit, lp_miss) = (p_detect.ln(), (1.0 - p_detect).ln());
    let mut lse = LogSumExp::default();
    let mut pattern = vec![false; steps];
    for code in 0..1u64 << steps {
        let mut hits = 0;
        for (i, slot) in pattern.iter_mut().enumerate() {
            *slot = (code >> i) & 1 == 1;
            hits += *slot as usize;
        }
        if fails(&pattern) {
            lse.push(hits as f64 * lp_hit + (steps - hits) as f64 * lp_miss);
        }
    }
    Ok(lse.value().exp())
}
