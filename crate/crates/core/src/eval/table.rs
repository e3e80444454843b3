//! Ablation tables and the run manifest that feeds them.
//!
//! A run manifest is a text file with one run per line:
//!
//! ```text
//! # label   checkpoint                split
//! c         runs/c/seed0.ckpt         heldout-conv
//! f         runs/f/seed0.ckpt         heldout-conv
//! ```
//!
//! Blank lines and `#` comments are ignored; fields are whitespace separated
//! and may not contain spaces.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{evaluate_prediction, Evaluation, RegionErrorReport};
use crate::error::{Error, Result};
use crate::features::AlignedClip;
use crate::model::Model;
use crate::synth::LandmarkDecoder;
use crate::tensor::Tensor;
use crate::train::Checkpoint;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunEntry {
    pub label: String,
    pub checkpoint: PathBuf,
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunManifest {
    pub runs: Vec<RunEntry>,
}

impl RunManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut runs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let [label, ckpt, split] = f[..] else {
                return Err(Error::format(
                    "run manifest",
                    format!("line {}: expected `label checkpoint split`", n + 1),
                ));
            };
            runs.push(RunEntry {
                label: label.into(),
                checkpoint: ckpt.into(),
                split: split.into(),
            });
        }
        Ok(RunManifest { runs })
    }

    /// Reads a manifest; relative checkpoint paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut m = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for r in &mut m.runs {
            if r.checkpoint.is_relative() {
                r.checkpoint = base.join(&r.checkpoint);
            }
        }
        Ok(m)
    }

    pub fn render(&self) -> String {
        let mut s = String::from("# label\tcheckpoint\tsplit\n");
        for r in &self.runs {
            let _ = writeln!(s, "{}\t{}\t{}", r.label, r.checkpoint.display(), r.split);
        }
        s
    }
}

/// Held-out clips of one subject, with the decoder that turns their
/// coefficients into landmarks.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub clips: Vec<AlignedClip>,
    pub decoder: LandmarkDecoder,
}

/// Scores of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunScores {
    pub errors: RegionErrorReport,
    pub f1: f64,
    /// Mean mixture-weight entropy in bits, for variants with a mixture.
    pub entropy_bits: Option<f64>,
}

/// Runs `model` over every clip of `set` and scores the concatenated output.
pub fn evaluate_model(model: &Model<f64>, set: &EvalSet) -> Result<RunScores> {
    if set.clips.is_empty() {
        return Err(Error::invalid("evaluation set has no clips"));
    }
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    let mut entropy = (0.0, 0usize);
    for c in &set.clips {
        let (a, g) = (Some(&c.audio), Some(&c.gaze));
        pred.extend_from_slice(model.infer(a, g)?.data());
        truth.extend_from_slice(c.face.data());
        if model.variant().has_mixture() {
            let pi = model.mixture_weights(&c.audio, &c.gaze)?;
            entropy.0 += pi.mean_entropy_bits() * c.len() as f64;
            entropy.1 += c.len();
        }
    }
    let width = set.clips[0].face.channels();
    let frames = truth.len() / width;
    let Evaluation { errors, f1 } = evaluate_prediction(
        &set.decoder,
        &Tensor::new(vec![frames, width], pred)?,
        &Tensor::new(vec![frames, width], truth)?,
    )?;
    Ok(RunScores {
        errors,
        f1,
        entropy_bits: (entropy.1 > 0).then(|| entropy.0 / entropy.1 as f64),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    /// `None` when the run could not be loaded or evaluated.
    pub scores: Option<RunScores>,
    /// Checksum trailer of the checkpoint file.
    pub checkpoint_sha256: Option<String>,
    /// Why the run is absent.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

const COLUMNS: [&str; 9] = [
    "run", "eyebrows", "eyes", "nose", "mouth", "all", "lip_closure_f1", "entropy_bits", "checkpoint_sha256",
];

impl AblationTable {
    pub fn push(&mut self, label: impl Into<String>, scores: RunScores, sha256: impl Into<String>) {
        self.rows.push(AblationRow {
            label: label.into(),
            scores: Some(scores),
            checkpoint_sha256: Some(sha256.into()),
            note: None,
        });
    }

    pub fn push_absent(&mut self, label: impl Into<String>, note: impl Into<String>) {
        self.rows.push(AblationRow {
            label: label.into(),
            scores: None,
            checkpoint_sha256: None,
            note: Some(note.into()),
        });
    }

    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Tab-separated form; absent runs carry `absent` in every score column.
    pub fn to_tsv(&self) -> String {
        let mut s = COLUMNS.join("\t");
        s.push('\n');
        for r in &self.rows {
            let mut cells = vec![r.label.clone()];
            match &r.scores {
                Some(sc) => {
                    let e = &sc.errors;
                    for v in [e.eyebrows, e.eyes, e.nose, e.mouth, e.all, sc.f1] {
                        cells.push(format!("{v:.6}"));
                    }
                    cells.push(sc.entropy_bits.map_or("-".into(), |h| format!("{h:.6}")));
                }
                None => cells.extend(std::iter::repeat_n("absent".to_string(), 7)),
            }
            cells.push(r.checkpoint_sha256.clone().unwrap_or_else(|| "-".into()));
            s.push_str(&cells.join("\t"));
            s.push('\n');
        }
        s
    }

    /// Aligned plain-text form for terminals.
    pub fn to_text(&self) -> String {
        let label_w = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(3).max(3);
        let mut s = format!(
            "{:<label_w$}  {:>9} {:>9} {:>9} {:>9} {:>9}  {:>7}  {:>7}\n",
            "run", "eyebrows", "eyes", "nose", "mouth", "all", "F1", "H(bits)"
        );
        for r in &self.rows {
            match &r.scores {
                Some(sc) => {
                    let e = &sc.errors;
                    let _ = writeln!(
                        s,
                        "{:<label_w$}  {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}  {:>7.4}  {:>7}",
                        r.label,
                        e.eyebrows,
                        e.eyes,
                        e.nose,
                        e.mouth,
                        e.all,
                        sc.f1,
                        sc.entropy_bits.map_or("-".into(), |h| format!("{h:.4}")),
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        "{:<label_w$}  absent: {}",
                        r.label,
                        r.note.as_deref().unwrap_or("")
                    );
                }
            }
        }
        s
    }
}

/// Loads and scores every run in manifest order. Runs whose checkpoint or
/// split is missing, or whose evaluation fails, are listed as absent.
pub fn build_ablation_table(manifest: &RunManifest, splits: &BTreeMap<String, EvalSet>) -> AblationTable {
    let mut table = AblationTable::default();
    for run in &manifest.runs {
        let Some(set) = splits.get(&run.split) else {
            table.push_absent(&run.label, format!("unknown split `{}`", run.split));
            continue;
        };
        let scored = Checkpoint::load(&run.checkpoint).and_then(|ck| {
            let model = ck.model::<f64>()?;
            Ok((evaluate_model(&model, set)?, ck.sha256()))
        });
        match scored {
            Ok((scores, sha)) => table.push(&run.label, scores, sha),
            Err(e) => table.push_absent(&run.label, e.to_string()),
        }
    }
    table
}
