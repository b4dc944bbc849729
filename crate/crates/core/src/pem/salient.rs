use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 6 category + 3 occlusion one-hots, camera-frame `x, y, z`, and yaw.
pub const SALIENT_DIM: usize = 13;
const OCCLUSION_OFFSET: usize = 6;
const LOC_OFFSET: usize = 9;
const ROT_INDEX: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Car,
    Van,
    Truck,
    Pedestrian,
    Cyclist,
    Tram,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Car,
        Category::Van,
        Category::Truck,
        Category::Pedestrian,
        Category::Cyclist,
        Category::Tram,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Occlusion {
    None,
    Partial,
    Mostly,
}

impl Occlusion {
    pub const ALL: [Occlusion; 3] = [Occlusion::None, Occlusion::Partial, Occlusion::Mostly];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SalientVector([f64; SALIENT_DIM]);

impl SalientVector {
    pub fn new(category: Category, occlusion: Occlusion, loc: [f64; 3], rot_y: f64) -> Result<Self> {
        if loc.iter().any(|v| !v.is_finite()) || !rot_y.is_finite() {
            return Err(Error::Schema("salient location and rotation must be finite".into()));
        }
        let mut v = [0.0; SALIENT_DIM];
        v[category as usize] = 1.0;
        v[OCCLUSION_OFFSET + occlusion as usize] = 1.0;
        v[LOC_OFFSET..LOC_OFFSET + 3].copy_from_slice(&loc);
        v[ROT_INDEX] = rot_y;
        Ok(Self(v))
    }

    /// Validates one-hot blocks and finiteness.
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; SALIENT_DIM] = values.try_into().map_err(|_| {
            Error::Schema(format!("salient vector needs {SALIENT_DIM} values, got {}", values.len()))
        })?;
        if arr.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("salient vector has non-finite entries".into()));
        }
        let one_hot = |block: &[f64]| {
            block.iter().all(|&b| b == 0.0 || b == 1.0) && block.iter().sum::<f64>() == 1.0
        };
        if !one_hot(&arr[..OCCLUSION_OFFSET]) || !one_hot(&arr[OCCLUSION_OFFSET..LOC_OFFSET]) {
            return Err(Error::Schema("salient one-hot blocks must sum to exactly 1".into()));
        }
        Ok(Self(arr))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn category(&self) -> Category {
        Category::ALL[self.0[..OCCLUSION_OFFSET].iter().position(|&b| b == 1.0).unwrap()]
    }

    pub fn occlusion(&self) -> Occlusion {
        Occlusion::ALL[self.0[OCCLUSION_OFFSET..LOC_OFFSET].iter().position(|&b| b == 1.0).unwrap()]
    }

    pub fn loc(&self) -> [f64; 3] {
        [self.0[LOC_OFFSET], self.0[LOC_OFFSET + 1], self.0[LOC_OFFSET + 2]]
    }

    pub fn rot_y(&self) -> f64 {
        self.0[ROT_INDEX]
    }

    /// Index of the forward (`z`) camera coordinate.
    pub const Z_INDEX: usize = LOC_OFFSET + 2;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRecord {
    pub salient: SalientVector,
    pub detected: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    category: Category,
    occlusion: Occlusion,
    loc: [f64; 3],
    rot_y: f64,
    detected: bool,
}

/// Reads one JSON object per line; blank lines are skipped. Errors carry the
/// 1-based line number.
pub fn read_detection_log<R: BufRead>(reader: R) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
        let salient = SalientVector::new(raw.category, raw.occlusion, raw.loc, raw.rot_y)
            .map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
        out.push(DetectionRecord { salient, detected: raw.detected });
    }
    if out.is_empty() {
        return Err(Error::Parse { line: 0, msg: "detection log contains no records".into() });
    }
    Ok(out)
}

pub fn write_detection_log<W: Write>(records: &[DetectionRecord], mut writer: W) -> Result<()> {
    for r in records {
        let raw = RawRecord {
            category: r.salient.category(),
            occlusion: r.salient.occlusion(),
            loc: r.salient.loc(),
            rot_y: r.salient.rot_y(),
            detected: r.detected,
        };
        serde_json::to_writer(&mut writer, &raw)?;
        writeln!(writer)?;
    }
    Ok(())
}
