//! Two-car longitudinal braking scenario.
//!
//! The ego car follows a lead car that brakes on a script. The only source of
//! randomness is the per-step detection outcome: a detected obstacle inside
//! the emergency range makes the ego car brake hard, otherwise it tracks its
//! target speed.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::clamp_prob;
use crate::pem::{Category, Occlusion, PerceptionModel, SalientVector};
use crate::stl::{Formula, Trace};

pub const DIST_CHANNEL: &str = "dist_m";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub horizon: usize,
    pub dt: f64,
    pub initial_speed: f64,
    pub initial_gap: f64,
    pub lead_brake_step: usize,
    pub lead_decel: f64,
    pub ego_decel: f64,
    pub emergency_range: f64,
    pub crash_threshold: f64,
    pub target_speed: f64,
    pub max_accel: f64,
    pub tracking_gain: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            horizon: 100,
            dt: 0.05,
            initial_speed: 19.44,
            initial_gap: 15.0,
            lead_brake_step: 30,
            lead_decel: 4.0,
            ego_decel: 8.0,
            emergency_range: 10.0,
            crash_threshold: 2.0,
            target_speed: 19.44,
            max_accel: 3.0,
            tracking_gain: 1.0,
        }
    }
}

impl ScenarioConfig {
    /// Twelve-step variant that is small enough to enumerate: coarser time
    /// step, shorter gap, lead braking from the first step.
    pub fn small() -> Self {
        Self {
            horizon: 12,
            dt: 0.25,
            initial_gap: 11.0,
            lead_brake_step: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("initial_speed", self.initial_speed),
            ("initial_gap", self.initial_gap),
            ("lead_decel", self.lead_decel),
            ("ego_decel", self.ego_decel),
            ("emergency_range", self.emergency_range),
            ("crash_threshold", self.crash_threshold),
            ("target_speed", self.target_speed),
            ("max_accel", self.max_accel),
            ("tracking_gain", self.tracking_gain),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("scenario {name} must be positive, got {v}")));
            }
        }
        if self.horizon < 2 {
            return Err(Error::Parameter("scenario horizon must be at least 2 steps".into()));
        }
        if !(self.crash_threshold < self.emergency_range && self.emergency_range < self.initial_gap) {
            return Err(Error::Parameter(
                "need crash_threshold < emergency_range < initial_gap".into(),
            ));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> SimState {
        SimState {
            step: 0,
            ego_pos: 0.0,
            ego_speed: self.initial_speed,
            lead_pos: self.initial_gap,
            lead_speed: self.initial_speed,
        }
    }

    /// `always[0, T-1] (dist_m >= crash_threshold)`.
    pub fn safety_formula(&self) -> Formula {
        Formula::min_distance(DIST_CHANNEL, self.crash_threshold, self.horizon - 1)
            .expect("validated scenario yields a valid formula")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub step: usize,
    pub ego_pos: f64,
    pub ego_speed: f64,
    pub lead_pos: f64,
    pub lead_speed: f64,
}

impl SimState {
    /// Lead rear to ego front, floored at zero.
    pub fn gap(&self) -> f64 {
        (self.lead_pos - self.ego_pos).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub detected: bool,
}

/// One Euler step.
pub fn step(state: &SimState, action: Action, cfg: &ScenarioConfig) -> SimState {
    let dt = cfg.dt;
    let gap = state.gap();
    let lead_speed = if state.step >= cfg.lead_brake_step {
        (state.lead_speed - cfg.lead_decel * dt).max(0.0)
    } else {
        state.lead_speed
    };
    let ego_speed = if action.detected && gap < cfg.emergency_range {
        (state.ego_speed - cfg.ego_decel * dt).max(0.0)
    } else {
        let accel = (cfg.tracking_gain * (cfg.target_speed - state.ego_speed))
            .clamp(-cfg.max_accel, cfg.max_accel);
        (state.ego_speed + accel * dt).max(0.0)
    };
    let lead_pos = state.lead_pos + lead_speed * dt;
    let ego_pos = (state.ego_pos + ego_speed * dt).min(lead_pos);
    SimState { step: state.step + 1, ego_pos, ego_speed, lead_pos, lead_speed }
}

/// States visited under a fixed action sequence, starting from the initial
/// state. `actions.len() + 1` states are returned.
pub fn replay(actions: &[bool], cfg: &ScenarioConfig) -> Vec<SimState> {
    let mut states = Vec::with_capacity(actions.len() + 1);
    let mut s = cfg.initial_state();
    states.push(s);
    for &a in actions {
        s = step(&s, Action { detected: a }, cfg);
        states.push(s);
    }
    states
}

/// Salient projection of a state: a car, unoccluded, straight ahead at the
/// current gap.
pub fn salient_of_state(state: &SimState) -> SalientVector {
    SalientVector::new(Category::Car, Occlusion::None, [0.0, 0.0, state.gap()], 0.0)
        .expect("state gap is finite")
}

/// Proposal input `h(s)`: the inter-vehicle gap in metres.
pub fn proposal_features(state: &SimState) -> [f64; 1] {
    [state.gap()]
}

/// A per-state detection probability.
pub trait StatePolicy: Sync {
    fn detect_probability(&self, state: &SimState) -> Result<f64>;
}

/// Target policy induced by a perception model through `salient_of_state`.
pub struct PemPolicy<'a>(pub &'a dyn PerceptionModel);

impl StatePolicy for PemPolicy<'_> {
    fn detect_probability(&self, state: &SimState) -> Result<f64> {
        self.0.detect_probability(&salient_of_state(state))
    }
}

/// State-independent detection probability (clamped).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPolicy(pub f64);

impl StatePolicy for ConstantPolicy {
    fn detect_probability(&self, _state: &SimState) -> Result<f64> {
        Ok(clamp_prob(self.0))
    }
}

/// Probability of the realized action.
#[inline]
pub fn realized(p_detect: f64, detected: bool) -> f64 {
    if detected {
        p_detect
    } else {
        1.0 - p_detect
    }
}

/// Probability stream selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Target,
    Proposal,
}

/// A rollout `[s0, a1, s1, ...]`. `actions[t]` is drawn at `states[t]` and
/// produces `states[t + 1]`; the probability streams hold the probability of
/// the realized action.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<SimState>,
    pub actions: Vec<bool>,
    pub target_p: Vec<f64>,
    pub proposal_p: Option<Vec<f64>>,
    pub dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn min_gap(&self) -> f64 {
        self.states.iter().map(SimState::gap).fold(f64::INFINITY, f64::min)
    }

    pub fn stream(&self, which: Stream) -> Result<&[f64]> {
        match which {
            Stream::Target => Ok(&self.target_p),
            Stream::Proposal => self
                .proposal_p
                .as_deref()
                .ok_or_else(|| Error::Argument("trajectory has no proposal stream".into())),
        }
    }

    /// Vehicle channels as an STL trace.
    pub fn to_trace(&self) -> Trace {
        states_trace(&self.states, self.dt)
    }

    /// Trace CSV plus `action,target_p,proposal_p`. Row `t >= 1` carries the
    /// action that produced state `t`; row 0 leaves these cells empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let base = self.to_trace();
        let mut channels = base.channels().to_vec();
        let mut columns: Vec<Vec<f64>> =
            channels.iter().map(|c| base.channel(c).map(<[f64]>::to_vec)).collect::<Result<_>>()?;
        let shifted = |v: &[f64]| std::iter::once(f64::NAN).chain(v.iter().copied()).collect::<Vec<_>>();
        let actions: Vec<f64> = self.actions.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
        channels.extend(["action".to_string(), "target_p".to_string(), "proposal_p".to_string()]);
        columns.push(shifted(&actions));
        columns.push(shifted(&self.target_p));
        columns.push(match &self.proposal_p {
            Some(q) => shifted(q),
            None => vec![f64::NAN; self.len()],
        });
        Trace::new(channels, columns, self.dt)?.write_csv(writer)
    }
}

/// `dist_m`, `ego_pos_m`, `ego_speed_mps`, `lead_pos_m`, `lead_speed_mps`.
pub fn states_trace(states: &[SimState], dt: f64) -> Trace {
    let col = |f: fn(&SimState) -> f64| states.iter().map(f).collect::<Vec<_>>();
    Trace::new(
        vec![
            DIST_CHANNEL.into(),
            "ego_pos_m".into(),
            "ego_speed_mps".into(),
            "lead_pos_m".into(),
            "lead_speed_mps".into(),
        ],
        vec![
            col(SimState::gap),
            col(|s| s.ego_pos),
            col(|s| s.ego_speed),
            col(|s| s.lead_pos),
            col(|s| s.lead_speed),
        ],
        dt,
    )
    .expect("state channels are consistent")
}

/// Sum of log probabilities of the realized actions in one stream.
pub fn rollout_log_probability(traj: &Trajectory, which: Stream) -> Result<f64> {
    Ok(traj.stream(which)?.iter().map(|p| p.ln()).sum())
}

/// Replays an action sequence and records target (and optionally proposal)
/// probabilities of each realized action.
pub fn replay_trajectory(
    actions: &[bool],
    target: &dyn StatePolicy,
    proposal: Option<&dyn StatePolicy>,
    cfg: &ScenarioConfig,
) -> Result<Trajectory> {
    let states = replay(actions, cfg);
    let mut target_p = Vec::with_capacity(actions.len());
    let mut proposal_p = proposal.map(|_| Vec::with_capacity(actions.len()));
    for (s, &a) in states.iter().zip(actions) {
        target_p.push(realized(target.detect_probability(s)?, a));
        if let (Some(q), Some(out)) = (proposal, proposal_p.as_mut()) {
            out.push(realized(q.detect_probability(s)?, a));
        }
    }
    Ok(Trajectory { states, actions: actions.to_vec(), target_p, proposal_p, dt: cfg.dt })
}

/// Samples `T - 1` detections from `sampler`, recording the realized-action
/// probability under both the sampler and the target.
pub fn rollout_with_rng<R: Rng>(
    sampler: &dyn StatePolicy,
    target: &dyn StatePolicy,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<Trajectory> {
    let n = cfg.horizon - 1;
    let mut states = Vec::with_capacity(cfg.horizon);
    let mut actions = Vec::with_capacity(n);
    let mut target_p = Vec::with_capacity(n);
    let mut proposal_p = Vec::with_capacity(n);
    let mut s = cfg.initial_state();
    states.push(s);
    for _ in 0..n {
        let q = sampler.detect_probability(&s)?;
        let p = target.detect_probability(&s)?;
        let detected = rng.gen::<f64>() < q;
        actions.push(detected);
        proposal_p.push(realized(q, detected));
        target_p.push(realized(p, detected));
        s = step(&s, Action { detected }, cfg);
        states.push(s);
    }
    Ok(Trajectory { states, actions, target_p, proposal_p: Some(proposal_p), dt: cfg.dt })
}

pub fn rollout(
    sampler: &dyn StatePolicy,
    target: &dyn StatePolicy,
    cfg: &ScenarioConfig,
    seed: u64,
) -> Result<Trajectory> {
    rollout_with_rng(sampler, target, cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}
