//! Data plans and variant grids for the synthetic ablation experiments.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::{evaluate_model, EvalSet, RegionErrorReport, RunScores};
use crate::features::AlignedClip;
use crate::model::ModelVariant;
use crate::synth::{generate_session, LandmarkDecoder, ManifestEntry, Split, Style, WorldConfig};
use crate::train::{train, Checkpoint, TrainConfig};

/// Held-out split names produced by [`DataPlan`].
pub const HELDOUT_CONVERSATIONAL: &str = "heldout-conv";
pub const HELDOUT_DESCRIPTIVE: &str = "heldout-desc";

/// Which styles the training sessions are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainSet {
    Mixed,
    Conversational,
    Descriptive,
}

impl TrainSet {
    pub fn name(self) -> &'static str {
        match self {
            TrainSet::Mixed => "mixed",
            TrainSet::Conversational => "conversational",
            TrainSet::Descriptive => "descriptive",
        }
    }
}

impl fmt::Display for TrainSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixed" => Ok(TrainSet::Mixed),
            "conversational" | "conv" => Ok(TrainSet::Conversational),
            "descriptive" | "desc" => Ok(TrainSet::Descriptive),
            _ => Err(Error::invalid(format!("unknown training set `{s}`"))),
        }
    }
}

/// Sessions for one subject. Every training set holds the same number of
/// frames: a mixed set takes `sessions` of each style, a single-style set
/// takes `2 · sessions` of that style.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPlan {
    pub subject: u8,
    pub train: TrainSet,
    pub sessions: usize,
    pub session_seconds: f64,
    pub heldout_sessions: usize,
    pub heldout_seconds: f64,
    pub seed: u64,
}

impl Default for DataPlan {
    fn default() -> Self {
        DataPlan {
            subject: 1,
            train: TrainSet::Mixed,
            sessions: 1,
            session_seconds: 20.0,
            heldout_sessions: 2,
            heldout_seconds: 60.0,
            seed: 0,
        }
    }
}

impl DataPlan {
    /// Applies one `key=value` setting (`subject`, `train_set`, `sessions`,
    /// `session_seconds`, `heldout_sessions`, `heldout_seconds`, `data_seed`);
    /// `Ok(false)` for foreign keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::invalid(format!("bad value `{v}` for `{key}`")))
        }
        match key {
            "subject" => self.subject = parse(key, value)?,
            "train_set" => self.train = value.parse()?,
            "sessions" => self.sessions = parse(key, value)?,
            "session_seconds" => self.session_seconds = parse(key, value)?,
            "heldout_sessions" => self.heldout_sessions = parse(key, value)?,
            "heldout_seconds" => self.heldout_seconds = parse(key, value)?,
            "data_seed" => self.seed = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        for e in self.entries() {
            e.config.validate()?;
        }
        if self.sessions == 0 || self.heldout_sessions == 0 {
            return Err(Error::invalid("sessions and heldout_sessions must be positive"));
        }
        Ok(())
    }

    /// All sessions of the plan; held-out seeds never overlap training seeds.
    pub fn entries(&self) -> Vec<ManifestEntry> {
        let base = self.seed.wrapping_mul(10_000);
        let mut out = Vec::new();
        let mut add = |name: String, split, seed: u64, secs, style| {
            out.push(ManifestEntry {
                name,
                split,
                config: WorldConfig::new(base + seed, secs, style, self.subject),
            })
        };
        let per_style = match self.train {
            TrainSet::Mixed => [self.sessions, self.sessions],
            TrainSet::Conversational => [2 * self.sessions, 0],
            TrainSet::Descriptive => [0, 2 * self.sessions],
        };
        for (k, (style, tag)) in [(Style::Conversational, "conv"), (Style::Descriptive, "desc")]
            .into_iter()
            .enumerate()
        {
            for i in 0..per_style[k] {
                let seed = 100 + 1000 * k as u64 + i as u64;
                add(format!("train-{tag}-{i}"), Split::Train, seed, self.session_seconds, style);
            }
            for i in 0..self.heldout_sessions {
                let seed = 5000 + 1000 * k as u64 + i as u64;
                add(format!("heldout-{tag}-{i}"), Split::Heldout, seed, self.heldout_seconds, style);
            }
        }
        out
    }

    /// Generates the sessions and runs the frontends.
    pub fn prepare(&self) -> Result<PreparedData> {
        let decoder = LandmarkDecoder::for_subject(self.subject)?;
        let mut train = Vec::new();
        let mut heldout: BTreeMap<String, EvalSet> = BTreeMap::new();
        for e in self.entries() {
            let clip = generate_session(&e.config)?.aligned()?;
            match e.split {
                Split::Train => train.push(clip),
                Split::Heldout => {
                    let key = match e.config.style {
                        Style::Conversational => HELDOUT_CONVERSATIONAL,
                        Style::Descriptive => HELDOUT_DESCRIPTIVE,
                    };
                    heldout
                        .entry(key.to_string())
                        .or_insert_with(|| EvalSet {
                            clips: Vec::new(),
                            decoder: decoder.clone(),
                        })
                        .clips
                        .push(clip);
                }
            }
        }
        Ok(PreparedData { train, heldout })
    }
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Vec<AlignedClip>,
    pub heldout: BTreeMap<String, EvalSet>,
}

/// Reduced-size training setup used for the synthetic ablations: one
/// model trains in under a minute on one core.
pub fn desk_train_config(variant: ModelVariant) -> TrainConfig {
    let mut cfg = TrainConfig::new(crate::model::ModelConfig::new(variant).with_size(16, 8));
    cfg.batch = 4;
    cfg.window = 160;
    cfg.steps = 2000;
    cfg.kl_weight = 0.1;
    cfg.precision = crate::real::Precision::Single;
    cfg
}

/// One trained run with its scores on every held-out split.
#[derive(Debug, Clone)]
pub struct GridRun {
    pub variant: ModelVariant,
    pub seed: u64,
    pub checkpoint: Checkpoint,
    pub scores: BTreeMap<String, RunScores>,
    pub seconds: f64,
}

/// Trains `base` once per variant and seed and scores each run.
pub fn run_grid(
    base: &TrainConfig,
    variants: &[ModelVariant],
    seeds: &[u64],
    data: &PreparedData,
    mut progress: impl FnMut(&GridRun),
) -> Result<Vec<GridRun>> {
    let mut runs = Vec::new();
    for &variant in variants {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.model.variant = variant;
            cfg.seed = seed;
            let start = std::time::Instant::now();
            let out = train(&cfg, &data.train, &[])?;
            if let Some(why) = out.diverged {
                return Err(Error::Numerical {
                    op: "train".into(),
                    detail: format!("variant {variant} seed {seed}: {why}"),
                });
            }
            let model = out.checkpoint.model::<f64>()?;
            let mut scores = BTreeMap::new();
            for (name, set) in &data.heldout {
                scores.insert(name.clone(), evaluate_model(&model, set)?);
            }
            let run = GridRun {
                variant,
                seed,
                checkpoint: out.checkpoint,
                scores,
                seconds: start.elapsed().as_secs_f64(),
            };
            progress(&run);
            runs.push(run);
        }
    }
    Ok(runs)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Column-wise median over runs; entropy only when every run has one.
pub fn median_scores<'a>(runs: impl IntoIterator<Item = &'a RunScores>) -> Option<RunScores> {
    let runs: Vec<&RunScores> = runs.into_iter().collect();
    if runs.is_empty() {
        return None;
    }
    let col = |f: &dyn Fn(&RunScores) -> f64| median(runs.iter().map(|r| f(r)).collect());
    let entropy = runs
        .iter()
        .map(|r| r.entropy_bits)
        .collect::<Option<Vec<f64>>>()
        .map(median);
    Some(RunScores {
        errors: RegionErrorReport {
            eyebrows: col(&|r| r.errors.eyebrows),
            eyes: col(&|r| r.errors.eyes),
            nose: col(&|r| r.errors.nose),
            mouth: col(&|r| r.errors.mouth),
            all: col(&|r| r.errors.all),
        },
        f1: col(&|r| r.f1),
        entropy_bits: entropy,
    })
}

/// Median scores of one variant on one split.
pub fn variant_median(runs: &[GridRun], variant: ModelVariant, split: &str) -> Option<RunScores> {
    median_scores(runs.iter().filter(|r| r.variant == variant).filter_map(|r| r.scores.get(split)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plans_hold_equal_training_frames_and_disjoint_seeds() {
        for train in [TrainSet::Mixed, TrainSet::Conversational, TrainSet::Descriptive] {
            let plan = DataPlan { train, sessions: 2, ..DataPlan::default() };
            let e = plan.entries();
            let n_train = e.iter().filter(|x| x.split == Split::Train).count();
            assert_eq!(n_train, 4, "{train}");
            let mut seeds: Vec<(Style, u64)> = e.iter().map(|x| (x.config.style, x.config.seed)).collect();
            let before = seeds.len();
            seeds.sort_by_key(|s| (s.0 as u8, s.1));
            seeds.dedup();
            assert_eq!(seeds.len(), before);
        }
        let mixed = DataPlan::default().entries();
        assert!(mixed.iter().any(|x| x.split == Split::Train && x.config.style == Style::Descriptive));
    }

    #[test]
    fn medians() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        let s = |all: f64, h: Option<f64>| RunScores {
            errors: RegionErrorReport { all, ..Default::default() },
            f1: all / 10.0,
            entropy_bits: h,
        };
        let m = median_scores([&s(1.0, Some(0.2)), &s(5.0, Some(0.1)), &s(2.0, Some(0.9))]).unwrap();
        assert_eq!((m.errors.all, m.f1, m.entropy_bits), (2.0, 0.2, Some(0.2)));
        assert!(median_scores([&s(1.0, None), &s(2.0, Some(0.3))]).unwrap().entropy_bits.is_none());
        assert!(median_scores(std::iter::empty()).is_none());
    }
}
