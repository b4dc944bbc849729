use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{bce, roc_auc};
use super::model::{MlpSpec, PemModel};
use super::salient::{DetectionRecord, SALIENT_DIM};
use crate::error::{Error, Result};
use crate::nn::{fit, Batch, Mlp, OptimizerConfig, Standardizer};

/// Fits a PEM to detection records by full-batch Adam on mean BCE.
/// Bitwise deterministic for a fixed seed.
pub fn train_pem(
    data: &[DetectionRecord],
    spec: &MlpSpec,
    opt: &OptimizerConfig,
    seed: u64,
) -> Result<PemModel> {
    if data.is_empty() {
        return Err(Error::Argument("cannot train on an empty dataset".into()));
    }
    spec.validate()?;
    let standardizer = Standardizer::fit(data.iter().map(|r| r.salient.as_slice()), SALIENT_DIM);
    let mut batch = Batch::new(SALIENT_DIM);
    let w = 1.0 / data.len() as f64;
    for r in data {
        batch.push(&standardizer.apply(r.salient.as_slice()), if r.detected { 1.0 } else { 0.0 }, w);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::random(SALIENT_DIM, &spec.hidden, spec.activation, &mut rng);
    fit(&mut net, &batch, opt)?;
    PemModel::new(spec.clone(), net, standardizer)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    /// Constant training-set detection rate.
    GuessMu,
    /// No hidden layers, same training loop as the PEM.
    Logistic,
}

pub fn make_baseline(
    kind: BaselineKind,
    data: &[DetectionRecord],
    opt: &OptimizerConfig,
    seed: u64,
) -> Result<PemModel> {
    if data.is_empty() {
        return Err(Error::Argument("cannot fit a baseline to an empty dataset".into()));
    }
    match kind {
        BaselineKind::GuessMu => {
            let rate = data.iter().filter(|r| r.detected).count() as f64 / data.len() as f64;
            Ok(PemModel::constant(rate))
        }
        BaselineKind::Logistic => train_pem(data, &MlpSpec::logistic(), opt, seed),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldMetrics {
    pub bce: f64,
    /// `None` when the held-out fold holds a single class.
    pub roc_auc: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    /// Mean held-out BCE over folds.
    pub bce: f64,
    /// Mean held-out ROC-AUC over folds where it is defined; pooled
    /// out-of-fold ROC-AUC when no single fold defines it.
    pub roc_auc: f64,
    pub folds: usize,
    pub per_fold: Vec<FoldMetrics>,
}

/// Shuffles `0..n` by seed and cuts it into `folds` near-equal groups.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Argument(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::Argument(format!("{n} records cannot fill {folds} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / folds, n % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for k in 0..folds {
        let len = base + usize::from(k < extra);
        let mut fold = idx[start..start + len].to_vec();
        fold.sort_unstable();
        out.push(fold);
        start += len;
    }
    Ok(out)
}

/// k-fold cross validation with a caller-supplied trainer. Folds train in
/// parallel with seeds `seed + fold`.
pub fn cross_validate_with<F>(
    data: &[DetectionRecord],
    folds: usize,
    seed: u64,
    trainer: F,
) -> Result<CalibrationReport>
where
    F: Fn(&[DetectionRecord], u64) -> Result<PemModel> + Sync,
{
    let assignment = fold_assignment(data.len(), folds, seed)?;
    let results = assignment
        .par_iter()
        .enumerate()
        .map(|(k, test_idx)| {
            let mut in_test = vec![false; data.len()];
            for &i in test_idx {
                in_test[i] = true;
            }
            let train: Vec<DetectionRecord> =
                data.iter().zip(&in_test).filter(|(_, &t)| !t).map(|(r, _)| *r).collect();
            let model = trainer(&train, seed.wrapping_add(k as u64))?;
            let preds = test_idx
                .iter()
                .map(|&i| model.eval(data[i].salient.as_slice()))
                .collect::<Result<Vec<f64>>>()?;
            let labels: Vec<bool> = test_idx.iter().map(|&i| data[i].detected).collect();
            let fold_bce = bce(&preds, &labels)?;
            let fold_auc = match roc_auc(&preds, &labels) {
                Ok(a) => Some(a),
                Err(Error::UndefinedMetric(_)) => None,
                Err(e) => return Err(e),
            };
            Ok((
                FoldMetrics { bce: fold_bce, roc_auc: fold_auc, n_train: train.len(), n_test: test_idx.len() },
                preds,
                labels,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let per_fold: Vec<FoldMetrics> = results.iter().map(|(m, _, _)| m.clone()).collect();
    let mean_bce = per_fold.iter().map(|m| m.bce).sum::<f64>() / folds as f64;
    let defined: Vec<f64> = per_fold.iter().filter_map(|m| m.roc_auc).collect();
    let auc = if defined.is_empty() {
        let preds: Vec<f64> = results.iter().flat_map(|(_, p, _)| p.iter().copied()).collect();
        let labels: Vec<bool> = results.iter().flat_map(|(_, _, l)| l.iter().copied()).collect();
        roc_auc(&preds, &labels)?
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok(CalibrationReport { bce: mean_bce, roc_auc: auc, folds, per_fold })
}

pub fn cross_validate(
    data: &[DetectionRecord],
    spec: &MlpSpec,
    opt: &OptimizerConfig,
    folds: usize,
    seed: u64,
) -> Result<CalibrationReport> {
    cross_validate_with(data, folds, seed, |train, s| train_pem(train, spec, opt, s))
}
