//! Seeded minibatch training with checkpointing and a text metrics log.
//!
//! The metrics log holds one record per line, fields separated by spaces:
//!
//! ```text
//! step=12 face_rec=0.41 audio_rec=0.97 gaze_rec=1.02 kl_shared=0.03 kl_modality=0 total=2.43 applied=1
//! eval step=100 heldout_face_mse=0.38
//! ```
//!
//! All numbers use the shortest decimal form that parses back exactly.

mod adam;
mod checkpoint;
mod sampler;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use sampler::WindowSampler;

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::features::{AlignedClip, ChannelStats, AUDIO_DIM, FACE_DIM, GAZE_DIM};
use crate::io::KvFile;
use crate::model::{Batch, LossBreakdown, Model, ModelConfig, Modality, Normalization};
use crate::real::{Precision, Real};
use crate::tensor::{Tape, Tensor};

/// Minimum window: the receptive field of one TCN at the default depth.
pub const MIN_WINDOW: usize = 125;

/// Training hyperparameters; documented `key=value` keys in parentheses.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Architecture (`variant`, `channels`, `latent`, `layers`, `taps`,
    /// `bias`, `lookahead`).
    pub model: ModelConfig,
    /// Adam step size (`lr`).
    pub lr: f64,
    /// Windows per step (`batch`).
    pub batch: usize,
    /// Frames per window (`window`).
    pub window: usize,
    pub steps: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Weight of every active KL term (`kl_weight`).
    pub kl_weight: f64,
    /// Held-out evaluation period in steps, 0 for the final step only
    /// (`eval_every`).
    pub eval_every: usize,
    /// Clip directories (`train`, `heldout`, comma separated).
    pub train_paths: Vec<PathBuf>,
    pub heldout_paths: Vec<PathBuf>,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        TrainConfig {
            model,
            lr: 1e-3,
            batch: 8,
            window: 200,
            steps: 1000,
            seed: 0,
            precision: Precision::Double,
            kl_weight: 1.0,
            eval_every: 0,
            train_paths: Vec::new(),
            heldout_paths: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.window < MIN_WINDOW {
            return Err(Error::invalid(format!(
                "window {} is shorter than the {MIN_WINDOW}-frame receptive field",
                self.window
            )));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr must be positive"));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::invalid("kl_weight must be non-negative"));
        }
        Ok(())
    }

    /// Applies one setting; `Ok(false)` for keys that belong elsewhere.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        if self.model.set(key, value)? {
            return Ok(true);
        }
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::invalid(format!("bad value `{v}` for `{key}`")))
        }
        let paths = |v: &str| -> Vec<PathBuf> {
            v.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(PathBuf::from)
                .collect()
        };
        match key {
            "lr" => self.lr = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "window" => self.window = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "kl_weight" => self.kl_weight = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "precision" => {
                self.precision = Precision::parse(value)
                    .ok_or_else(|| Error::invalid(format!("unknown precision `{value}`")))?
            }
            "train" => self.train_paths = paths(value),
            "heldout" => self.heldout_paths = paths(value),
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv(&self) -> KvFile {
        let join = |p: &[PathBuf]| {
            p.iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut entries: Vec<(String, String)> = self
            .model
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let more = [
            ("lr", self.lr.to_string()),
            ("batch", self.batch.to_string()),
            ("window", self.window.to_string()),
            ("steps", self.steps.to_string()),
            ("seed", self.seed.to_string()),
            ("precision", self.precision.as_str().to_string()),
            ("kl_weight", self.kl_weight.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("train", join(&self.train_paths)),
            ("heldout", join(&self.heldout_paths)),
        ];
        entries.extend(more.into_iter().map(|(k, v)| (k.to_string(), v)));
        KvFile { entries }
    }

    /// Starts from defaults for `variant` and applies every entry; unknown
    /// keys are an error.
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let variant = kv
            .get("variant")
            .ok_or_else(|| Error::invalid("missing `variant`"))?
            .parse()?;
        let mut cfg = TrainConfig::new(ModelConfig::new(variant));
        kv.apply_all(|k, v| cfg.set(k, v))?;
        Ok(cfg)
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricRecord {
    Step {
        step: usize,
        loss: LossBreakdown,
        /// Whether the optimizer applied the update.
        applied: bool,
    },
    Eval {
        step: usize,
        heldout_face_mse: f64,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub records: Vec<MetricRecord>,
}

impl MetricsLog {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            match r {
                MetricRecord::Step {
                    step,
                    loss: l,
                    applied,
                } => writeln!(
                    s,
                    "step={step} face_rec={} audio_rec={} gaze_rec={} kl_shared={} kl_modality={} total={} applied={}",
                    l.face_rec, l.audio_rec, l.gaze_rec, l.kl_shared, l.kl_modality, l.total,
                    u8::from(*applied)
                ),
                MetricRecord::Eval {
                    step,
                    heldout_face_mse,
                } => writeln!(s, "eval step={step} heldout_face_mse={heldout_face_mse}"),
            }
            .unwrap();
        }
        s
    }

    pub fn steps(&self) -> impl Iterator<Item = (usize, &LossBreakdown)> {
        self.records.iter().filter_map(|r| match r {
            MetricRecord::Step { step, loss, .. } => Some((*step, loss)),
            _ => None,
        })
    }

    pub fn last_eval(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| match r {
            MetricRecord::Eval {
                heldout_face_mse, ..
            } => Some(*heldout_face_mse),
            _ => None,
        })
    }
}

/// Result of a training run. On divergence `checkpoint` holds the last
/// parameters whose loss was finite and `diverged` says what went wrong.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: MetricsLog,
    pub diverged: Option<String>,
    pub skipped_steps: u64,
}

/// Input statistics over the training clips.
pub fn fit_normalization(clips: &[AlignedClip]) -> Result<Normalization> {
    Ok(Normalization {
        audio: ChannelStats::fit(clips.iter().map(|c| &c.audio))?,
        gaze: ChannelStats::fit(clips.iter().map(|c| &c.gaze))?,
    })
}

/// Trains from a fresh seeded initialization in the configured precision.
pub fn train(cfg: &TrainConfig, data: &[AlignedClip], heldout: &[AlignedClip]) -> Result<TrainOutcome> {
    match cfg.precision {
        Precision::Single => train_in::<f32>(cfg, data, heldout),
        Precision::Double => train_in::<f64>(cfg, data, heldout),
    }
}

fn gather<F: Real>(clips: &[AlignedClip], picks: &[(usize, usize)], window: usize, model: &Model<F>) -> Result<Batch<F>> {
    let b = picks.len();
    let mut audio = Vec::with_capacity(b * window * AUDIO_DIM);
    let mut gaze = Vec::with_capacity(b * window * GAZE_DIM);
    let mut face = Vec::with_capacity(b * window * FACE_DIM);
    for &(c, start) in picks {
        let w = clips[c].window(start, window);
        audio.extend(model.normalize(Modality::Audio, &w.audio)?.into_data());
        gaze.extend(model.normalize(Modality::Gaze, &w.gaze)?.into_data());
        face.extend(w.face.data().iter().map(|&v| F::of(v)));
    }
    Ok(Batch {
        audio: Tensor::new(vec![b, window, AUDIO_DIM], audio)?,
        gaze: Tensor::new(vec![b, window, GAZE_DIM], gaze)?,
        face: Tensor::new(vec![b, window, FACE_DIM], face)?,
    })
}

/// Mean squared face-coefficient error of offline inference over clips.
pub fn heldout_face_mse<F: Real>(model: &Model<F>, clips: &[AlignedClip]) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for c in clips {
        let pred = model.infer(Some(&c.audio), Some(&c.gaze))?;
        for (p, t) in pred.data().iter().zip(c.face.data()) {
            sum += (p.f64() - t).powi(2);
        }
        n += c.face.len();
    }
    Ok(if n == 0 { f64::NAN } else { sum / n as f64 })
}

fn train_in<F: Real>(cfg: &TrainConfig, data: &[AlignedClip], heldout: &[AlignedClip]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let sampler = WindowSampler::new(data, cfg.window)?;
    let mut model = Model::<F>::new(cfg.model.clone(), cfg.seed)?;
    model.norm = fit_normalization(data)?;
    let mut state = AdamState::new(model.params().tensors());
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut log = MetricsLog::default();
    let latent = cfg.model.latent;
    let mut last_good = model.params().tensors().to_vec();
    let mut diverged = None;

    let mut step = 0;
    while step < cfg.steps {
        let picks: Vec<_> = (0..cfg.batch).map(|_| sampler.sample(&mut rng)).collect();
        let batch = gather(data, &picks, cfg.window, &model)?;
        let noise: Vec<Tensor<F>> = (0..model.noise_count())
            .map(|_| {
                Tensor::from_fn(&[cfg.batch, cfg.window, latent], |_| {
                    F::of(StandardNormal.sample(&mut rng))
                })
            })
            .collect();
        let mut tape = Tape::new();
        let vars = model.register(&mut tape);
        let lv = model.loss_on_tape(&mut tape, &vars, &batch, &noise, F::of(cfg.kl_weight))?;
        let loss = lv.breakdown(&tape);
        if !loss.is_finite() {
            let op = tape.first_nonfinite().unwrap_or("loss").to_string();
            diverged = Some(format!("non-finite loss at step {} (first produced by `{op}`)", step + 1));
            model.param_values_mut().clone_from_slice(&last_good);
            break;
        }
        last_good.clone_from_slice(model.params().tensors());
        let grads = tape.backward(lv.total)?;
        let grads: Vec<Vec<F>> = vars.iter().map(|&v| grads.data_or_zero(v)).collect();
        let applied = adam_step(model.param_values_mut(), &grads, &mut state, &adam)?;
        step += 1;
        log.records.push(MetricRecord::Step {
            step,
            loss,
            applied,
        });
        let due = cfg.eval_every > 0 && step % cfg.eval_every == 0;
        if !heldout.is_empty() && (due || step == cfg.steps) {
            log.records.push(MetricRecord::Eval {
                step,
                heldout_face_mse: heldout_face_mse(&model, heldout)?,
            });
        }
    }
    let skipped_steps = state.skipped;
    Ok(TrainOutcome {
        checkpoint: Checkpoint::from_model(&model, cfg, step as u64, Some(&state)),
        log,
        diverged,
        skipped_steps,
    })
}

#[cfg(test)]
mod tests;
