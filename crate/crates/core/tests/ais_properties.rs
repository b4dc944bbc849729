use pemrisk::ais::{
    adaptive_est, cem_threshold, kl_batch, log_weight, pretrain_proposal, proposal_curve, sample_rollouts,
    smoothed_kl_loss, CemConfig, ProposalModel,
};
use pemrisk::nn::{Activation, Standardizer};
use pemrisk::pem::{MlpSpec, PemModel};
use pemrisk::sim::{ConstantPolicy, PemPolicy, ScenarioConfig, StatePolicy};
use pemrisk::stl::{robustness, Metric};
use proptest::prelude::*;

proptest! {
    #[test]
    fn threshold_is_floored_and_monotone(
        mut values in prop::collection::vec(-10.0f64..10.0, 1..200),
        shift in 0.0f64..5.0,
        gamma in -2.0f64..2.0,
    ) {
        values.sort_by(f64::total_cmp);
        let sigma = 0.95;
        let g = cem_threshold(&values, sigma, gamma).unwrap();
        prop_assert!(g >= gamma);
        let raised: Vec<f64> = values.iter().map(|v| v + shift).collect();
        prop_assert!(cem_threshold(&raised, sigma, gamma).unwrap() >= g);
    }
}

fn small_batch() -> (Vec<pemrisk::sim::Trajectory>, Vec<f64>, ProposalModel) {
    let cfg = ScenarioConfig::small();
    let f = cfg.safety_formula();
    let pem = PemModel::distance_logistic(7.5, -0.2);
    let spec = MlpSpec { hidden: vec![4], activation: Activation::Tanh };
    let std = Standardizer { mean: vec![8.0], std: vec![2.0] };
    let sampler = ProposalModel::init(&spec, std.clone(), 1).unwrap();
    let trajs = sample_rollouts(&sampler, &PemPolicy(&pem), &cfg, 3, 0, 40).unwrap();
    let rob = trajs.iter().map(|t| robustness(&t.to_trace(), &f, &Metric::Classical).unwrap()).collect();
    (trajs, rob, ProposalModel::init(&spec, std, 2).unwrap())
}

#[test]
fn alpha_zero_weights_every_survivor_equally() {
    let (trajs, rob, proposal) = small_batch();
    let batch = kl_batch(&trajs, &rob, &proposal, 5.0, 0.0).unwrap();
    assert!(batch.len() > 0);
    let survivors: Vec<_> = trajs.iter().zip(&rob).filter(|(_, &r)| r <= 5.0).collect();
    let steps: usize = survivors.iter().map(|(t, _)| t.actions.len()).sum();
    assert_eq!(batch.len(), steps);
    assert!(batch.weights.iter().all(|&w| w == 1.0));
}

#[test]
fn alpha_one_with_equal_weights_is_the_realized_action_nll() {
    let (trajs, rob, proposal) = small_batch();
    // Equal weights: replace the recorded proposal stream with the target stream.
    let trajs: Vec<_> = trajs
        .into_iter()
        .map(|mut t| {
            t.proposal_p = Some(t.target_p.clone());
            t
        })
        .collect();
    assert!(trajs.iter().all(|t| log_weight(t).unwrap() == 0.0));
    let gamma_k = 5.0;
    let (loss, _) = smoothed_kl_loss(&trajs, &rob, &proposal, gamma_k, 1.0).unwrap();
    let mut nll = 0.0;
    for (t, _) in trajs.iter().zip(&rob).filter(|(_, &r)| r <= gamma_k) {
        for (s, &a) in t.states.iter().zip(&t.actions) {
            let q = proposal.detect_probability(s).unwrap();
            nll -= if a { q.ln() } else { (1.0 - q).ln() };
        }
    }
    assert!((loss - nll).abs() <= 1e-9 * nll, "{loss} vs {nll}");
}

fn visited_gaps(target: &dyn StatePolicy, cfg: &ScenarioConfig) -> Vec<f64> {
    let trajs = sample_rollouts(target, target, cfg, 0, 0, 100).unwrap();
    let mut gaps: Vec<f64> = trajs.iter().flat_map(|t| t.states[..t.actions.len()].iter().map(|s| s.gap())).collect();
    gaps.sort_by(f64::total_cmp);
    gaps.dedup();
    gaps
}

#[test]
fn pretraining_matches_the_target_on_visited_gaps() {
    let cfg = ScenarioConfig::small();
    let cem = CemConfig::small();
    for pem in [PemModel::constant(0.9), PemModel::distance_logistic(7.5, -0.2)] {
        let target = PemPolicy(&pem);
        let proposal = pretrain_proposal(&target, &cfg, &cem, 0).unwrap();
        let gaps = visited_gaps(&target, &cfg);
        let curve = proposal_curve(&proposal, &pem, &gaps).unwrap();
        let worst = curve.iter().map(|c| (c.proposal_p - c.pem_p).abs()).fold(0.0, f64::max);
        assert!(worst <= 0.02, "worst gap {worst}");
        let first = sample_rollouts(&proposal, &target, &cfg, 0, 1, 100).unwrap();
        let mean_lw = first.iter().map(|t| log_weight(t).unwrap().abs()).sum::<f64>() / 100.0;
        assert!(mean_lw < 0.05, "mean |log w| {mean_lw}");
    }
}

#[test]
fn unreachable_failure_stalls_with_zero_estimate() {
    let cfg = ScenarioConfig::small();
    let f = cfg.safety_formula();
    let cem = CemConfig { stages: 4, samples_per_stage: 40, eval_samples: 40, ..CemConfig::small() };
    let out = adaptive_est(&ConstantPolicy(1.0), &f, &cfg, &cem, 0).unwrap();
    assert!(out.stages.iter().all(|d| d.n_fail == 0));
    assert_eq!(out.report.mu_hat, 0.0);
    assert_eq!(out.report.n_fail, 0);
    assert!(out.report.stalled);
}

#[test]
fn blindness_fails_immediately() {
    let cfg = ScenarioConfig::small();
    let f = cfg.safety_formula();
    let cem = CemConfig { stages: 2, samples_per_stage: 40, eval_samples: 40, ..CemConfig::small() };
    let out = adaptive_est(&ConstantPolicy(0.0), &f, &cfg, &cem, 0).unwrap();
    let first = &out.stages[0];
    assert_eq!(first.n_fail, first.n_samples);
    assert_eq!(first.gamma_k, cem.gamma);
    assert_eq!(out.report.n_total, cem.eval_samples);
    assert!((out.report.mu_hat - 1.0).abs() < 1e-9);
}

#[test]
fn adapted_proposals_lower_detection_where_braking_matters() {
    let cfg = ScenarioConfig::small();
    let f = cfg.safety_formula();
    let pem = PemModel::distance_logistic(7.5, -0.2);
    let target = PemPolicy(&pem);
    // Gaps where the ego decides whether to brake, and the opening gaps
    // where every rollout starts and no failure is decided yet.
    let band: Vec<f64> = (0..=8).map(|i| 6.5 + 0.25 * i as f64).collect();
    let far: Vec<f64> = (0..=4).map(|i| 10.0 + 0.25 * i as f64).collect();
    let (mut below, mut mimics) = (0, 0);
    for seed in 0..10 {
        let out = adaptive_est(&target, &f, &cfg, &CemConfig::small(), seed).unwrap();
        let near = proposal_curve(&out.proposal, &pem, &band).unwrap();
        below += usize::from(near.iter().all(|c| c.proposal_p <= c.pem_p));
        let tail = proposal_curve(&out.proposal, &pem, &far).unwrap();
        mimics += usize::from(tail.iter().all(|c| (c.proposal_p - c.pem_p).abs() <= 0.02));
    }
    assert!(below >= 9, "proposal below the pem in {below}/10 seeds");
    assert!(mimics >= 9, "proposal mimics the pem at large gaps in {mimics}/10 seeds");
}
