//! Failure-probability estimators and the adaptive proposal loop.

mod cem;
mod estimate;
mod proposal;

pub use cem::{
    adaptive_est, cem_threshold, elite_batch, elite_set, kl_batch, pretrain_proposal, run_mc, run_naive_flat,
    sample_rollouts, smoothed_kl_loss, smoothed_weights, stage_threshold, AdaptiveOutcome,
    CemConfig, StageDiagnostics,
};
pub use estimate::{
    is_estimate, is_estimate_with, log_weight, mc_estimate, required_samples, robustness_values,
    EstimationReport,
};
pub use proposal::{proposal_curve, write_curve_csv, CurvePoint, ProposalModel};
