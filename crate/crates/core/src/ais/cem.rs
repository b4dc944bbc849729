//! State-dependent cross-entropy adaptation of the detection proposal.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::estimate::{is_estimate_with, log_weight, mc_estimate, robustness_values, EstimationReport};
use super::proposal::ProposalModel;
use crate::error::{Error, Result};
use crate::nn::{fit, Batch, OptimizerConfig, Standardizer};
use crate::pem::MlpSpec;
use crate::sim::{rollout_with_rng, ConstantPolicy, ScenarioConfig, StatePolicy, Trajectory};
use crate::stl::{Formula, Metric};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    pub stages: usize,
    pub samples_per_stage: usize,
    pub eval_samples: usize,
    pub quantile: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// Chosen per run rather than read from the `cem` table.
    #[serde(skip)]
    pub metric: Metric,
    pub pretrain_samples: usize,
    pub pretrain_optimizer: OptimizerConfig,
    /// Per-stage optimisation of the proposal objective.
    pub optimizer: OptimizerConfig,
    /// Consecutive non-improving stages tolerated before giving up.
    pub patience: usize,
    pub proposal: MlpSpec,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            stages: 10,
            samples_per_stage: 100,
            eval_samples: 100,
            quantile: 0.95,
            alpha: 0.1,
            gamma: 0.0,
            metric: Metric::Classical,
            pretrain_samples: 100,
            pretrain_optimizer: OptimizerConfig::default().with_epochs(500).with_learning_rate(1e-2),
            optimizer: OptimizerConfig::default().with_epochs(500).with_learning_rate(3e-4),
            patience: 3,
            proposal: MlpSpec::proposal(),
        }
    }
}

impl CemConfig {
    /// Settings used on the short oracle-checked scenario: 200 rollouts per
    /// stage and milder weight smoothing, since 12-step weights span far
    /// fewer decades than 100-step ones.
    pub fn small() -> Self {
        Self { samples_per_stage: 200, alpha: 0.5, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages < 1 {
            return Err(Error::Parameter("at least one stage required".into()));
        }
        if self.samples_per_stage < 2 || self.eval_samples < 1 || self.pretrain_samples < 1 {
            return Err(Error::Parameter("sample counts too small".into()));
        }
        if !(0.95..1.0).contains(&self.quantile) {
            return Err(Error::Parameter(format!("quantile must lie in [0.95, 1), got {}", self.quantile)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Parameter(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !self.gamma.is_finite() {
            return Err(Error::Parameter("gamma must be finite".into()));
        }
        self.metric.validate()?;
        self.proposal.validate()
    }
}

/// `max(gamma, values[floor(sigma n)])`.
pub fn cem_threshold(sorted: &[f64], sigma: f64, gamma: f64) -> Result<f64> {
    let idx = (sigma * sorted.len() as f64).floor();
    if !(idx >= 0.0 && (idx as usize) < sorted.len()) {
        return Err(Error::Argument(format!(
            "quantile index {idx} outside a batch of {}",
            sorted.len()
        )));
    }
    Ok(gamma.max(sorted[idx as usize]))
}

/// Stage threshold: robustness values are ordered from safest to least safe
/// before indexing, so the trajectories at or below the threshold are the
/// least safe `1 - sigma` share of the batch.
pub fn stage_threshold(robustness: &[f64], sigma: f64, gamma: f64) -> Result<f64> {
    let mut desc = robustness.to_vec();
    desc.sort_by(|a, b| b.total_cmp(a));
    cem_threshold(&desc, sigma, gamma)
}

/// `exp(alpha (lw_i - max_j lw_j))`.
pub fn smoothed_weights(log_w: &[f64], alpha: f64) -> Vec<f64> {
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    log_w.iter().map(|lw| (alpha * (lw - m)).exp()).collect()
}

/// Stage threshold together with the trajectories it selects.
///
/// Trajectories are ranked from least to most safe, ties broken by index.
/// The least safe `N - floor(sigma N)` form the elite set; once the
/// threshold reaches `gamma`, every trajectory at or below `gamma` is elite
/// instead. Ranking rather than filtering by value keeps the elite set small
/// when many rollouts share the same robustness.
pub fn elite_set(robustness: &[f64], sigma: f64, gamma: f64) -> Result<(f64, Vec<usize>)> {
    let gamma_k = stage_threshold(robustness, sigma, gamma)?;
    if gamma_k == gamma {
        let all = (0..robustness.len()).filter(|&i| robustness[i] <= gamma).collect();
        return Ok((gamma_k, all));
    }
    let mut order: Vec<usize> = (0..robustness.len()).collect();
    order.sort_by(|&a, &b| robustness[a].total_cmp(&robustness[b]));
    let m = robustness.len() - (sigma * robustness.len() as f64).floor() as usize;
    order.truncate(m);
    order.sort_unstable();
    Ok((gamma_k, order))
}

/// Training batch for the smoothed cross-entropy objective over the given
/// trajectories: every step labelled with its realized action and weighted
/// by the trajectory's smoothed importance weight.
pub fn elite_batch(
    trajs: &[Trajectory],
    elite: &[usize],
    proposal: &ProposalModel,
    alpha: f64,
) -> Result<Batch> {
    if elite.is_empty() {
        return Err(Error::Stall("no trajectory qualifies for the stage objective".into()));
    }
    let log_w = elite.iter().map(|&i| log_weight(&trajs[i])).collect::<Result<Vec<_>>>()?;
    let weights = smoothed_weights(&log_w, alpha);
    let mut batch = Batch::new(1);
    for (&i, &w) in elite.iter().zip(&weights) {
        let t = &trajs[i];
        for (s, &a) in t.states.iter().zip(&t.actions) {
            batch.push(&proposal.input(s.gap()), if a { 1.0 } else { 0.0 }, w);
        }
    }
    Ok(batch)
}

/// `elite_batch` over all trajectories with `r <= gamma_k`.
pub fn kl_batch(
    trajs: &[Trajectory],
    robustness: &[f64],
    proposal: &ProposalModel,
    gamma_k: f64,
    alpha: f64,
) -> Result<Batch> {
    if robustness.len() != trajs.len() {
        return Err(Error::Argument("one robustness value per trajectory required".into()));
    }
    let elite: Vec<usize> = (0..trajs.len()).filter(|&i| robustness[i] <= gamma_k).collect();
    if elite.is_empty() {
        return Err(Error::Stall(format!("no trajectory at or below threshold {gamma_k}")));
    }
    elite_batch(trajs, &elite, proposal, alpha)
}

/// `-sum_i w_i^alpha 1{r_i <= gamma_k} sum_t ln q(a_t | h(s_t))` and its
/// gradient in the proposal parameters. Importance weights come from the
/// recorded proposal stream, so they stay fixed while `proposal` changes.
pub fn smoothed_kl_loss(
    trajs: &[Trajectory],
    robustness: &[f64],
    proposal: &ProposalModel,
    gamma_k: f64,
    alpha: f64,
) -> Result<(f64, Vec<f64>)> {
    let batch = kl_batch(trajs, robustness, proposal, gamma_k, alpha)?;
    Ok(proposal.net().weighted_bce(&batch))
}

/// `n` rollouts under `sampler`. Rollout `i` of stage `stage` draws from its
/// own stream of the master seed, so batches are reproducible regardless of
/// thread count.
pub fn sample_rollouts(
    sampler: &dyn StatePolicy,
    target: &dyn StatePolicy,
    scenario: &ScenarioConfig,
    seed: u64,
    stage: u32,
    n: usize,
) -> Result<Vec<Trajectory>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((u64::from(stage) << 32) | i as u64);
            rollout_with_rng(sampler, target, scenario, &mut rng)
        })
        .collect()
}

/// Fits a proposal to the target's detection probabilities on states
/// visited by target rollouts (soft-label cross-entropy).
pub fn pretrain_proposal(
    target: &dyn StatePolicy,
    scenario: &ScenarioConfig,
    cem: &CemConfig,
    seed: u64,
) -> Result<ProposalModel> {
    let trajs = sample_rollouts(target, target, scenario, seed, 0, cem.pretrain_samples)?;
    let mut gaps = Vec::new();
    let mut probs = Vec::new();
    for t in &trajs {
        for s in &t.states[..t.actions.len()] {
            gaps.push(s.gap());
            probs.push(target.detect_probability(s)?);
        }
    }
    let standardizer = Standardizer::fit(gaps.iter().map(std::slice::from_ref), 1);
    let mut proposal = ProposalModel::init(&cem.proposal, standardizer, seed)?;
    let mut batch = Batch::new(1);
    let w = 1.0 / gaps.len() as f64;
    for (&g, &p) in gaps.iter().zip(&probs) {
        batch.push(&proposal.input(g), p, w);
    }
    fit(proposal.net_mut(), &batch, &cem.pretrain_optimizer)?;
    Ok(proposal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDiagnostics {
    pub stage: usize,
    pub gamma_k: f64,
    /// Trajectories failing the final threshold `gamma`.
    pub n_fail: usize,
    pub n_samples: usize,
    pub n_elite: usize,
    pub mean_log_weight: f64,
    /// Optimised objective; absent when the stage ended the run.
    pub loss: Option<f64>,
    pub resampled: bool,
}

#[derive(Debug, Clone)]
pub struct AdaptiveOutcome {
    pub report: EstimationReport,
    pub stages: Vec<StageDiagnostics>,
    pub proposal: ProposalModel,
    /// The `N_e` rollouts behind the final estimate.
    pub final_batch: Vec<Trajectory>,
}

/// Pre-training, `K` adaptation stages, then an importance-sampling estimate
/// from `N_e` fresh rollouts under the final proposal.
pub fn adaptive_est(
    target: &dyn StatePolicy,
    formula: &Formula,
    scenario: &ScenarioConfig,
    cem: &CemConfig,
    seed: u64,
) -> Result<AdaptiveOutcome> {
    let start = Instant::now();
    scenario.validate()?;
    cem.validate()?;
    let metric = cem.metric;
    let mut proposal = pretrain_proposal(target, scenario, cem, seed)?;
    let mut sims = cem.pretrain_samples;
    let mut stages = Vec::with_capacity(cem.stages);
    let mut best = f64::INFINITY;
    let mut idle = 0;
    let mut stalled = false;

    for k in 1..=cem.stages {
        let stage = k as u32;
        let mut trajs = sample_rollouts(&proposal, target, scenario, seed, stage, cem.samples_per_stage)?;
        sims += trajs.len();
        let mut rob = robustness_values(&trajs, formula, &metric)?;
        let (mut gamma_k, mut elite) = elite_set(&rob, cem.quantile, cem.gamma)?;
        let mut resampled = false;
        let batch = match elite_batch(&trajs, &elite, &proposal, cem.alpha) {
            Err(Error::Stall(_)) => {
                resampled = true;
                trajs = sample_rollouts(
                    &proposal,
                    target,
                    scenario,
                    seed,
                    stage | 1 << 31,
                    cem.samples_per_stage,
                )?;
                sims += trajs.len();
                rob = robustness_values(&trajs, formula, &metric)?;
                (gamma_k, elite) = elite_set(&rob, cem.quantile, cem.gamma)?;
                elite_batch(&trajs, &elite, &proposal, cem.alpha)
            }
            other => other,
        };
        let lw = trajs.iter().map(log_weight).collect::<Result<Vec<_>>>()?;
        let mut diag = StageDiagnostics {
            stage: k,
            gamma_k,
            n_fail: rob.iter().filter(|&&r| r <= cem.gamma).count(),
            n_samples: trajs.len(),
            n_elite: elite.len(),
            mean_log_weight: lw.iter().sum::<f64>() / lw.len() as f64,
            loss: None,
            resampled,
        };

        if gamma_k > cem.gamma && gamma_k >= best {
            idle += 1;
        } else {
            idle = 0;
        }
        best = best.min(gamma_k);
        let batch = match batch {
            Ok(b) if idle < cem.patience => b,
            Ok(_) | Err(Error::Stall(_)) => {
                stalled = true;
                stages.push(diag);
                break;
            }
            Err(e) => return Err(e),
        };
        diag.loss = Some(fit(proposal.net_mut(), &batch, &cem.optimizer)?.final_loss);
        stages.push(diag);
    }

    let final_stage = cem.stages as u32 + 1;
    let trajs = sample_rollouts(&proposal, target, scenario, seed, final_stage, cem.eval_samples)?;
    sims += trajs.len();
    let rob = robustness_values(&trajs, formula, &metric)?;
    let mut report = is_estimate_with(&trajs, &rob, cem.gamma, &metric)?;
    report.method = "adaptive".into();
    report.stage_thresholds = stages.iter().map(|d| d.gamma_k).collect();
    report.n_simulations = sims;
    report.stalled = stalled;
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(AdaptiveOutcome { report, stages, proposal, final_batch: trajs })
}

/// Plain Monte Carlo with `n` target rollouts.
pub fn run_mc(
    target: &dyn StatePolicy,
    formula: &Formula,
    scenario: &ScenarioConfig,
    metric: &Metric,
    gamma: f64,
    n: usize,
    seed: u64,
) -> Result<EstimationReport> {
    let start = Instant::now();
    scenario.validate()?;
    let trajs = sample_rollouts(target, target, scenario, seed, 0, n)?;
    let mut report = mc_estimate(&trajs, formula, metric, gamma)?;
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Importance sampling under a state-independent detection probability.
#[allow(clippy::too_many_arguments)]
pub fn run_naive_flat(
    target: &dyn StatePolicy,
    p_detect: f64,
    formula: &Formula,
    scenario: &ScenarioConfig,
    metric: &Metric,
    gamma: f64,
    n: usize,
    seed: u64,
) -> Result<EstimationReport> {
    let start = Instant::now();
    scenario.validate()?;
    let trajs = sample_rollouts(&ConstantPolicy(p_detect), target, scenario, seed, 0, n)?;
    let rob = robustness_values(&trajs, formula, metric)?;
    let mut report = is_estimate_with(&trajs, &rob, gamma, metric)?;
    report.method = "naive-flat".into();
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_examples() {
        let v: Vec<f64> = (0..100).map(f64::from).collect();
        assert_eq!(cem_threshold(&v, 0.95, 0.0).unwrap(), 95.0);
        assert_eq!(cem_threshold(&[-3.0, -2.0, -1.0], 0.95, 0.0).unwrap(), 0.0);
        assert_eq!(cem_threshold(&[2.5; 20], 0.95, 0.0).unwrap(), 2.5);
        assert!(cem_threshold(&[], 0.95, 0.0).is_err());
        assert!(cem_threshold(&[1.0], 1.0, 0.0).is_err());
        // least safe 5% of 0..99
        assert_eq!(stage_threshold(&v, 0.95, -10.0).unwrap(), 4.0);
        let (g, elite) = elite_set(&[1.0; 40], 0.95, 0.0).unwrap();
        assert_eq!((g, elite), (1.0, vec![0, 1]));
        let mut r = vec![1.0; 40];
        r[7] = 0.5;
        assert_eq!(elite_set(&r, 0.95, 0.0).unwrap().1, vec![0, 7]);
        r[9] = -1.0;
        r[30] = -1.0;
        r[31] = -2.0;
        assert_eq!(elite_set(&r, 0.95, 0.0).unwrap(), (0.0, vec![9, 30, 31]));
    }

    #[test]
    fn weight_smoothing_examples() {
        let w = smoothed_weights(&[-10.0, -20.0], 0.1);
        assert_eq!(w[0], 1.0);
        assert!((w[1] - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(smoothed_weights(&[-3.0, 400.0, -900.0], 0.0), vec![1.0; 3]);
    }
}
