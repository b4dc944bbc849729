//! State-dependent detection proposal `q(detect | h(s))` with `h(s)` the gap.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, Standardizer};
use crate::pem::{MlpSpec, PerceptionModel};
use crate::sim::{proposal_features, SimState, StatePolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalModel {
    net: Mlp,
    standardizer: Standardizer,
}

impl ProposalModel {
    /// Randomly initialised network of the given shape over the gap feature.
    pub fn init(spec: &MlpSpec, standardizer: Standardizer, seed: u64) -> Result<Self> {
        spec.validate()?;
        if standardizer.dim() != 1 {
            return Err(Error::Schema("proposal input is the scalar gap".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::random(1, &spec.hidden, spec.activation, &mut rng);
        Ok(Self { net, standardizer })
    }

    pub fn from_parts(net: Mlp, standardizer: Standardizer) -> Result<Self> {
        if net.input_dim() != 1 || standardizer.dim() != 1 {
            return Err(Error::Schema("proposal input is the scalar gap".into()));
        }
        Ok(Self { net, standardizer })
    }

    /// Zero-hidden-layer network returning `p` everywhere.
    pub fn constant(p: f64) -> Self {
        let bias = crate::numerics::logit(crate::numerics::clamp_prob(p));
        let net = Mlp::from_parts(vec![1, 1], Activation::Relu, vec![0.0, bias])
            .expect("constant shape is valid");
        Self { net, standardizer: Standardizer::identity(1) }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    /// Standardized network input for a gap.
    pub fn input(&self, gap: f64) -> [f64; 1] {
        [(gap - self.standardizer.mean[0]) / self.standardizer.std[0]]
    }

    /// Detection probability in `[eps, 1 - eps]` at a gap.
    pub fn prob_at_gap(&self, gap: f64) -> f64 {
        self.net.prob(&self.input(gap))
    }
}

impl StatePolicy for ProposalModel {
    fn detect_probability(&self, state: &SimState) -> Result<f64> {
        Ok(self.prob_at_gap(proposal_features(state)[0]))
    }
}

/// One row of a proposal curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub gap_m: f64,
    pub proposal_p: f64,
    pub pem_p: f64,
}

/// Proposal and PEM detection probabilities along a gap grid.
pub fn proposal_curve(
    proposal: &ProposalModel,
    pem: &dyn PerceptionModel,
    gaps: &[f64],
) -> Result<Vec<CurvePoint>> {
    if gaps.is_empty() {
        return Err(Error::Argument("gap grid is empty".into()));
    }
    gaps.iter()
        .map(|&g| {
            let state = SimState { step: 0, ego_pos: 0.0, ego_speed: 0.0, lead_pos: g, lead_speed: 0.0 };
            Ok(CurvePoint {
                gap_m: g,
                proposal_p: proposal.prob_at_gap(g),
                pem_p: pem.detect_probability(&crate::sim::salient_of_state(&state))?,
            })
        })
        .collect()
}

pub fn write_curve_csv<W: std::io::Write>(points: &[CurvePoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["gap_m", "proposal_p", "pem_p"])?;
    for p in points {
        w.write_record([p.gap_m.to_string(), p.proposal_p.to_string(), p.pem_p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
