//! Planted logistic detection data, for checking the training pipeline
//! against a known generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::PemModel;
use super::salient::{Category, DetectionRecord, Occlusion, SalientVector, SALIENT_DIM};
use crate::error::Result;
use crate::numerics::{clamp_prob, sigmoid};

/// `p(detected) = sigmoid(w . g + b)` over the raw salient vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedLogistic {
    pub weights: [f64; SALIENT_DIM],
    pub bias: f64,
}

impl Default for PlantedLogistic {
    /// Vulnerable road users, occlusion and distance all hurt detection.
    fn default() -> Self {
        Self {
            weights: [
                0.5, 0.3, 0.4, -0.8, -0.6, 0.2, // category
                0.8, 0.0, -1.2, // occlusion
                -0.02, 0.0, -0.06, // x, y, z
                0.1, // rot_y
            ],
            bias: 2.5,
        }
    }
}

impl PlantedLogistic {
    pub fn probability(&self, salient: &SalientVector) -> f64 {
        let z: f64 = self.weights.iter().zip(salient.as_slice()).map(|(w, x)| w * x).sum();
        clamp_prob(sigmoid(z + self.bias))
    }

    pub fn model(&self) -> PemModel {
        PemModel::logistic(&self.weights, self.bias)
    }

    /// Random obstacle: uniform category, mostly unoccluded, ahead of the
    /// camera within 60 m.
    pub fn sample_salient<R: Rng>(rng: &mut R) -> SalientVector {
        let category = Category::ALL[rng.gen_range(0..Category::ALL.len())];
        let u: f64 = rng.gen();
        let occlusion = if u < 0.5 {
            Occlusion::None
        } else if u < 0.8 {
            Occlusion::Partial
        } else {
            Occlusion::Mostly
        };
        let loc = [rng.gen_range(-15.0..15.0), rng.gen_range(-1.0..2.5), rng.gen_range(2.0..60.0)];
        let rot = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        SalientVector::new(category, occlusion, loc, rot).expect("sampled values are finite")
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<Vec<DetectionRecord>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n)
            .map(|_| {
                let salient = Self::sample_salient(&mut rng);
                let detected = rng.gen::<f64>() < self.probability(&salient);
                DetectionRecord { salient, detected }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pem::PerceptionModel;

    #[test]
    fn model_matches_generator() {
        let g = PlantedLogistic::default();
        let m = g.model();
        for r in g.generate(200, 1).unwrap() {
            let a = g.probability(&r.salient);
            let b = m.detect_probability(&r.salient).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn detection_rate_is_mixed() {
        let data = PlantedLogistic::default().generate(5000, 2).unwrap();
        let rate = data.iter().filter(|r| r.detected).count() as f64 / data.len() as f64;
        assert!(rate > 0.5 && rate < 0.9, "{rate}");
    }
}
