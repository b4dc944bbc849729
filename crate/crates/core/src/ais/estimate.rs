//! Monte Carlo and importance-sampling estimators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::Trajectory;
use crate::stl::{robustness, Formula, Metric};

/// Failure-probability estimate with the bookkeeping needed for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub method: String,
    pub metric: String,
    pub mu_hat: f64,
    /// `log10(mu_hat)` computed without leaving the log domain, so it stays
    /// finite when `mu_hat` underflows. `None` when nothing failed.
    pub log10_mu: Option<f64>,
    pub std_error: f64,
    pub n_fail: usize,
    pub n_total: usize,
    pub failure_fraction: f64,
    /// Mean of `-ln p(tau)` under the target over failing trajectories.
    pub mean_fail_nll: Option<f64>,
    pub stage_thresholds: Vec<f64>,
    pub n_simulations: usize,
    pub stalled: bool,
    /// Excluded from serialized output so reruns are byte-identical.
    #[serde(skip)]
    pub wall_clock_s: f64,
}

/// Samples needed for relative error `rel_err` at probability `mu`:
/// `ceil(1 / (rel_err^2 mu))`.
pub fn required_samples(mu: f64, rel_err: f64) -> Result<u64> {
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(Error::Argument(format!("mu must lie in (0, 1], got {mu}")));
    }
    if !(rel_err > 0.0 && rel_err.is_finite()) {
        return Err(Error::Argument(format!("relative error must be positive, got {rel_err}")));
    }
    let x = 1.0 / (rel_err * rel_err * mu);
    if !(x < u64::MAX as f64) {
        return Err(Error::Argument("sample count overflows".into()));
    }
    // Values a few ulps above an integer come from rounding in the product,
    // not from the formula.
    let r = x.round();
    Ok(if (x - r).abs() <= 1e-12 * x { r as u64 } else { x.ceil() as u64 })
}

/// `sum_t [ln p_t - ln q_t]` over the realized actions.
pub fn log_weight(traj: &Trajectory) -> Result<f64> {
    let q = traj
        .proposal_p
        .as_ref()
        .ok_or_else(|| Error::Argument("trajectory has no proposal stream".into()))?;
    if q.len() != traj.target_p.len() {
        return Err(Error::Argument("probability streams differ in length".into()));
    }
    Ok(traj.target_p.iter().zip(q).map(|(p, q)| p.ln() - q.ln()).sum())
}

/// Robustness of each trajectory's trace at step 0.
pub fn robustness_values(trajs: &[Trajectory], formula: &Formula, metric: &Metric) -> Result<Vec<f64>> {
    trajs.iter().map(|t| robustness(&t.to_trace(), formula, metric)).collect()
}

fn target_nll(traj: &Trajectory) -> f64 {
    -traj.target_p.iter().map(|p| p.ln()).sum::<f64>()
}

/// Shared estimator core. Failing trajectories contribute `exp(lw_i)`; the
/// sum is formed relative to the largest failing log weight.
fn summarize(
    trajs: &[Trajectory],
    rob: &[f64],
    log_w: Option<&[f64]>,
    gamma: f64,
    method: &str,
    metric: &Metric,
) -> Result<EstimationReport> {
    let n = trajs.len();
    if n == 0 {
        return Err(Error::Argument("estimator needs at least one trajectory".into()));
    }
    let lw = |i: usize| log_w.map_or(0.0, |w| w[i]);
    let fails: Vec<bool> = rob.iter().map(|&r| r <= gamma).collect();
    let n_fail = fails.iter().filter(|&&f| f).count();
    let m = (0..n).filter(|&i| fails[i]).map(lw).fold(f64::NEG_INFINITY, f64::max);
    let (mu_hat, log10_mu, std_error) = if n_fail == 0 {
        (0.0, None, 0.0)
    } else {
        let y: Vec<f64> = (0..n).map(|i| if fails[i] { (lw(i) - m).exp() } else { 0.0 }).collect();
        let nf = n as f64;
        let mean_y = y.iter().sum::<f64>() / nf;
        let var_y = if n > 1 {
            y.iter().map(|v| (v - mean_y) * (v - mean_y)).sum::<f64>() / (nf - 1.0)
        } else {
            0.0
        };
        let scale = m.exp();
        (
            scale * mean_y,
            Some((m + mean_y.ln()) / std::f64::consts::LN_10),
            scale * var_y.sqrt() / nf.sqrt(),
        )
    };
    let mean_fail_nll = (n_fail > 0).then(|| {
        (0..n).filter(|&i| fails[i]).map(|i| target_nll(&trajs[i])).sum::<f64>() / n_fail as f64
    });
    Ok(EstimationReport {
        method: method.to_string(),
        metric: metric.name().to_string(),
        mu_hat,
        log10_mu,
        std_error,
        n_fail,
        n_total: n,
        failure_fraction: n_fail as f64 / n as f64,
        mean_fail_nll,
        stage_thresholds: Vec::new(),
        n_simulations: n,
        stalled: false,
        wall_clock_s: 0.0,
    })
}

/// `mu_hat = (1/N) sum 1{r <= gamma}` for trajectories drawn from the target.
pub fn mc_estimate(
    trajs: &[Trajectory],
    formula: &Formula,
    metric: &Metric,
    gamma: f64,
) -> Result<EstimationReport> {
    let rob = robustness_values(trajs, formula, metric)?;
    summarize(trajs, &rob, None, gamma, "mc", metric)
}

/// `mu_hat = (1/N) sum 1{r <= gamma} w` with log-domain weights from the
/// recorded target and proposal streams.
pub fn is_estimate(
    trajs: &[Trajectory],
    formula: &Formula,
    metric: &Metric,
    gamma: f64,
) -> Result<EstimationReport> {
    let rob = robustness_values(trajs, formula, metric)?;
    is_estimate_with(trajs, &rob, gamma, metric)
}

/// `is_estimate` over precomputed robustness values.
pub fn is_estimate_with(
    trajs: &[Trajectory],
    rob: &[f64],
    gamma: f64,
    metric: &Metric,
) -> Result<EstimationReport> {
    if rob.len() != trajs.len() {
        return Err(Error::Argument("one robustness value per trajectory required".into()));
    }
    let lw = trajs.iter().map(log_weight).collect::<Result<Vec<_>>>()?;
    summarize(trajs, rob, Some(&lw), gamma, "is", metric)
}
