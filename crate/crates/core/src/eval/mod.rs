//! Landmark metrics, lip-closure scoring, mixture-weight heatmaps and
//! ablation tables.
//!
//! Landmark errors are mean squared errors per coordinate (x and y count
//! separately), in synthetic landmark units.

mod table;

pub use table::{
    build_ablation_table, evaluate_model, AblationRow, AblationTable, EvalSet, RunEntry, RunManifest,
    RunScores,
};

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_table;
use crate::model::MixtureWeights;
use crate::real::Real;
use crate::synth::{LandmarkDecoder, Region, SyntheticLandmarkSet, INNER_LOWER, INNER_UPPER, LANDMARKS};
use crate::tensor::Tensor;

/// Default closure threshold in landmark units.
pub const CLOSURE_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegionErrorReport {
    pub eyebrows: f64,
    pub eyes: f64,
    pub nose: f64,
    pub mouth: f64,
    /// Over the union of all landmarks.
    pub all: f64,
}

impl RegionErrorReport {
    pub fn region(&self, r: Region) -> f64 {
        match r {
            Region::Eyebrows => self.eyebrows,
            Region::Eyes => self.eyes,
            Region::Nose => self.nose,
            Region::Mouth => self.mouth,
        }
    }
}

/// Per-region MSE between two landmark sequences of equal length.
pub fn region_errors(pred: &SyntheticLandmarkSet, truth: &SyntheticLandmarkSet) -> Result<RegionErrorReport> {
    if pred.points.shape() != truth.points.shape() {
        return Err(Error::invalid(format!(
            "landmark shapes differ: {:?} vs {:?}",
            pred.points.shape(),
            truth.points.shape()
        )));
    }
    let t = pred.frames();
    let mut sums = [0.0f64; 4];
    for (i, (p, q)) in pred.points.data().iter().zip(truth.points.data()).enumerate() {
        let j = (i / 2) % LANDMARKS;
        sums[Region::of(j) as usize] += (p - q).powi(2);
    }
    let denom = |n: usize| if t == 0 { 0.0 } else { (2 * n * t) as f64 };
    let per: Vec<f64> = Region::ALL
        .iter()
        .map(|r| {
            let d = denom(r.points().len());
            if d == 0.0 {
                0.0
            } else {
                sums[*r as usize] / d
            }
        })
        .collect();
    let all_d = denom(LANDMARKS);
    Ok(RegionErrorReport {
        eyebrows: per[0],
        eyes: per[1],
        nose: per[2],
        mouth: per[3],
        all: if all_d == 0.0 { 0.0 } else { sums.iter().sum::<f64>() / all_d },
    })
}

/// Decodes both coefficient sequences and compares their landmarks.
pub fn landmark_error(
    decoder: &LandmarkDecoder,
    pred: &Tensor<f64>,
    truth: &Tensor<f64>,
) -> Result<RegionErrorReport> {
    if pred.shape() != truth.shape() {
        return Err(Error::invalid(format!(
            "coefficient shapes differ: {:?} vs {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    region_errors(&decoder.decode(pred)?, &decoder.decode(truth)?)
}

/// Per-frame lip-closure flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClosureSequence {
    pub closed: Vec<bool>,
}

/// A frame is closed when every inner upper/lower lip pair lies within
/// `threshold` units of each other.
pub fn detect_closures(landmarks: &SyntheticLandmarkSet, threshold: f64) -> ClosureSequence {
    let closed = (0..landmarks.frames())
        .map(|t| {
            INNER_UPPER.zip(INNER_LOWER).all(|(u, l)| {
                let (a, b) = (landmarks.point(t, u), landmarks.point(t, l));
                (a[0] - b[0]).hypot(a[1] - b[1]) <= threshold
            })
        })
        .collect();
    ClosureSequence { closed }
}

/// Frame-level F1 of the closed class; 0 when precision and recall are 0.
pub fn lip_closure_f1(pred: &ClosureSequence, truth: &ClosureSequence) -> Result<f64> {
    if pred.closed.len() != truth.closed.len() {
        return Err(Error::invalid(format!(
            "closure sequences have {} and {} frames",
            pred.closed.len(),
            truth.closed.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.closed.iter().zip(&truth.closed) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Landmark error and closure F1 of one predicted coefficient sequence.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Evaluation {
    pub errors: RegionErrorReport,
    pub f1: f64,
}

pub fn evaluate_prediction(
    decoder: &LandmarkDecoder,
    pred: &Tensor<f64>,
    truth: &Tensor<f64>,
) -> Result<Evaluation> {
    if pred.shape() != truth.shape() {
        return Err(Error::invalid("prediction and truth differ in shape"));
    }
    let (p, t) = (decoder.decode(pred)?, decoder.decode(truth)?);
    Ok(Evaluation {
        errors: region_errors(&p, &t)?,
        f1: lip_closure_f1(
            &detect_closures(&p, CLOSURE_THRESHOLD),
            &detect_closures(&t, CLOSURE_THRESHOLD),
        )?,
    })
}

/// One modality's mixture weights over a window, `L` rows by `len` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightHeatmap {
    pub rows: Vec<Vec<f64>>,
    pub row_mean: Vec<f64>,
    pub row_std: Vec<f64>,
}

impl WeightHeatmap {
    /// Rows whose mean weight exceeds 0.9.
    pub fn dominant_rows(&self) -> Vec<usize> {
        (0..self.rows.len()).filter(|&d| self.row_mean[d] > 0.9).collect()
    }

    /// Rows whose mean weight is below 0.1.
    pub fn unused_rows(&self) -> Vec<usize> {
        (0..self.rows.len()).filter(|&d| self.row_mean[d] < 0.1).collect()
    }

    pub fn varying_rows(&self, min_std: f64) -> Vec<usize> {
        (0..self.rows.len()).filter(|&d| self.row_std[d] > min_std).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let cols = self.rows.first().map_or(0, Vec::len);
        let header: Vec<String> = (0..cols).map(|t| format!("t{t}")).collect();
        write_table(path, &header, &self.rows)
    }

    /// `row mean std` lines with a `dominant`/`unused` tag where it applies.
    pub fn summary(&self) -> String {
        let mut s = String::from("row\tmean\tstd\ttag\n");
        for d in 0..self.rows.len() {
            let tag = if self.row_mean[d] > 0.9 {
                "dominant"
            } else if self.row_mean[d] < 0.1 {
                "unused"
            } else {
                ""
            };
            s.push_str(&format!("{d}\t{:.4}\t{:.4}\t{tag}\n", self.row_mean[d], self.row_std[d]));
        }
        s
    }
}

/// Weights of `modality` over frames `[start, start + len)`.
pub fn weight_heatmap<F: Real>(
    pi: &MixtureWeights<F>,
    modality: usize,
    start: usize,
    len: usize,
) -> Result<WeightHeatmap> {
    let (m, t, l) = pi.dims();
    if modality >= m {
        return Err(Error::invalid(format!("modality {modality} of {m}")));
    }
    if len == 0 || start.checked_add(len).is_none_or(|e| e > t) {
        return Err(Error::invalid(format!(
            "window [{start}, {start}+{len}) outside the {t}-frame clip"
        )));
    }
    let w = pi.modality(modality);
    let rows: Vec<Vec<f64>> = (0..l)
        .map(|d| (start..start + len).map(|f| w[f * l + d].f64()).collect())
        .collect();
    let row_mean: Vec<f64> = rows.iter().map(|r| r.iter().sum::<f64>() / len as f64).collect();
    let row_std = rows
        .iter()
        .zip(&row_mean)
        .map(|(r, m)| (r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / len as f64).sqrt())
        .collect();
    Ok(WeightHeatmap {
        rows,
        row_mean,
        row_std,
    })
}

/// Writes the heatmap CSV and returns it for inspection.
pub fn export_weight_heatmap<F: Real>(
    pi: &MixtureWeights<F>,
    modality: usize,
    start: usize,
    len: usize,
    path: &Path,
) -> Result<WeightHeatmap> {
    let h = weight_heatmap(pi, modality, start, len)?;
    h.write_csv(path)?;
    Ok(h)
}
