//! Ground-truth to prediction pairing by minimum-cost assignment.

use serde::{Deserialize, Deserializer};

use crate::error::{Error, Result};

/// Axis-aligned pixel box with an optional detector confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub conf: Option<f64>,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x1 < x2 && y1 < y2) {
            return Err(Error::Schema(format!("box corners out of order: [{x1}, {y1}, {x2}, {y2}]")));
        }
        Ok(Self { x1, y1, x2, y2, conf: None })
    }

    pub fn with_conf(mut self, conf: f64) -> Self {
        self.conf = Some(conf);
        self
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v: Vec<f64> = Vec::deserialize(d)?;
        let b = match v.len() {
            4 | 5 => BBox::new(v[0], v[1], v[2], v[3]).map_err(serde::de::Error::custom)?,
            n => return Err(serde::de::Error::custom(format!("box needs 4 or 5 numbers, got {n}"))),
        };
        Ok(if v.len() == 5 { b.with_conf(v[4]) } else { b })
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    inter / (a.area() + b.area() - inter)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostRule {
    /// `1 - IoU`; disjoint boxes cost 1.
    #[default]
    OneMinusIou,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct BoxMatchProblem {
    pub gt: Vec<BBox>,
    pub pred: Vec<BBox>,
    #[serde(default)]
    pub cost_rule: CostRule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, column)` pairs, i.e. `(gt, pred)`, sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl BoxMatchProblem {
    pub fn from_json(src: &str) -> Result<Self> {
        Ok(serde_json::from_str(src)?)
    }

    pub fn cost_matrix(&self) -> Vec<Vec<f64>> {
        self.gt
            .iter()
            .map(|g| {
                self.pred
                    .iter()
                    .map(|p| match self.cost_rule {
                        CostRule::OneMinusIou => 1.0 - iou(g, p),
                    })
                    .collect()
            })
            .collect()
    }

    /// Per ground truth: matched to a prediction with IoU at least
    /// `min_iou`. Unmatched ground truths are misses.
    pub fn detection_labels(&self, assignment: &Assignment, min_iou: f64) -> Vec<bool> {
        let mut out = vec![false; self.gt.len()];
        for &(g, p) in &assignment.pairs {
            out[g] = iou(&self.gt[g], &self.pred[p]) >= min_iou;
        }
        out
    }
}

/// Minimum-cost one-to-one assignment of size `min(rows, cols)`
/// (shortest augmenting paths with dual potentials, O(n^2 m)).
pub fn hungarian(cost: &[Vec<f64>]) -> Assignment {
    let n = cost.len();
    let m = cost.first().map(Vec::len).unwrap_or(0);
    if n == 0 || m == 0 {
        return Assignment { pairs: Vec::new(), total_cost: 0.0 };
    }
    if n > m {
        let transposed: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| cost[i][j]).collect()).collect();
        let t = hungarian(&transposed);
        let mut pairs: Vec<(usize, usize)> = t.pairs.into_iter().map(|(j, i)| (i, j)).collect();
        pairs.sort_unstable();
        let total_cost = pairs.iter().map(|&(i, j)| cost[i][j]).sum();
        return Assignment { pairs, total_cost };
    }

    // 1-based potentials; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> =
        (1..=m).filter(|&j| owner[j] != 0).map(|j| (owner[j] - 1, j - 1)).collect();
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(i, j)| cost[i][j]).sum();
    Assignment { pairs, total_cost }
}

pub fn hungarian_match(problem: &BoxMatchProblem) -> Assignment {
    hungarian(&problem.cost_matrix())
}
