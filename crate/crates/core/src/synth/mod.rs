//! Synthetic capture sessions with known factor structure.
//!
//! A session is a deterministic function of its [`WorldConfig`]. Latent
//! tracks (speech envelope, phones, gaze, smiles, blinks) drive three
//! observable streams: harmonic audio, eye-tracker observations and 256
//! facial coefficients laid out in blocks (see [`face`]). Mouth
//! coefficients depend on the audio factors only, eye coefficients on gaze
//! and blinks, expression coefficients on the smile factor, which also
//! shifts the tracked pupils downward.
//!
//! Conversational sessions alternate short utterances with long pauses and
//! contain smile episodes and silent anticipatory mouth openings; descriptive
//! sessions are steady read speech with reading saccades and no smiles.

mod audio;
pub mod face;
mod landmarks;
mod observe;
mod tracks;

pub use audio::{samples_for, BAND_HZ, SAMPLE_RATE};
pub use landmarks::{
    decode_landmarks, LandmarkDecoder, Region, SyntheticLandmarkSet, EYEBROWS, EYE_POINTS,
    GAP_PROFILE, GAP_SCALE, INNER_LOWER, INNER_UPPER, LANDMARKS, MOUTH_POINTS, NOSE, SATURATION,
};
pub use observe::{observed_gaze, BLINK_DROP, SMILE_DROP};
pub use tracks::{FactorTracks, MAX_SLEW};

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{
    align_streams, gaze_features, mel_spectrogram, AlignedClip, EyeObservation, PcmClip,
    TimeSeries, FACE_DIM, FRAME_RATE,
};
use crate::io::{read_series, read_wav, write_series, write_wav};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Style {
    Descriptive,
    Conversational,
}

impl Style {
    pub fn name(self) -> &'static str {
        match self {
            Style::Descriptive => "descriptive",
            Style::Conversational => "conversational",
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "descriptive" => Ok(Style::Descriptive),
            "conversational" => Ok(Style::Conversational),
            _ => Err(Error::invalid(format!("unknown style `{s}`"))),
        }
    }
}

/// Per-subject factor statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectProfile {
    pub id: u8,
    pub f0_hz: f64,
    /// Multiplies syllable durations.
    pub syllable_scale: f64,
    /// Probability that an utterance starts with a silent mouth opening.
    pub onset_rate: f64,
    pub smiles_per_minute: f64,
    /// Tracker noise in normalized eye units.
    pub gaze_noise: f64,
    /// Iris radius in head-frame pixels.
    pub iris_radius: f64,
}

impl SubjectProfile {
    pub fn get(id: u8) -> Result<Self> {
        let p = |f0_hz, syllable_scale, onset_rate, smiles_per_minute, gaze_noise, iris_radius| {
            SubjectProfile {
                id,
                f0_hz,
                syllable_scale,
                onset_rate,
                smiles_per_minute,
                gaze_noise,
                iris_radius,
            }
        };
        match id {
            1 => Ok(p(118.0, 1.0, 0.6, 14.0, 0.02, 6.0)),
            // Smaller eyes and a dark iris: noisier pupil tracking.
            2 => Ok(p(205.0, 0.9, 0.35, 10.0, 0.09, 4.5)),
            3 => Ok(p(170.0, 1.1, 0.45, 12.0, 0.03, 6.0)),
            _ => Err(Error::invalid(format!("subject must be 1..=3, got {id}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub seed: u64,
    /// Seconds; must exceed 2.
    pub duration: f64,
    pub style: Style,
    pub subject: u8,
}

impl WorldConfig {
    pub fn new(seed: u64, duration: f64, style: Style, subject: u8) -> Self {
        WorldConfig {
            seed,
            duration,
            style,
            subject,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 2.0 && self.duration.is_finite()) {
            return Err(Error::invalid(format!(
                "duration must exceed 2 s, got {}",
                self.duration
            )));
        }
        SubjectProfile::get(self.subject).map(|_| ())
    }

    pub fn frames(&self) -> usize {
        (self.duration * FRAME_RATE).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSession {
    pub config: WorldConfig,
    pub pcm: PcmClip,
    pub gaze: Vec<[EyeObservation; 2]>,
    /// `[T, 256]` at 100 Hz.
    pub face: Tensor<f64>,
    /// Ground truth; not visible to models.
    pub tracks: FactorTracks,
}

pub fn generate_session(config: &WorldConfig) -> Result<SyntheticSession> {
    config.validate()?;
    let subject = SubjectProfile::get(config.subject)?;
    let n = config.frames();
    let seed = config.seed ^ ((config.subject as u64) << 56) ^ ((config.style as u64) << 48);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tracks = tracks::generate(&mut rng, n, config.style, &subject);
    rng.set_stream(1);
    let pcm = audio::synthesize(&mut rng, &tracks, config.style, &subject);
    rng.set_stream(2);
    let gaze = observe::observe(&mut rng, &tracks, &subject);
    rng.set_stream(3);
    let face = face::coefficients(&mut rng, &tracks);
    Ok(SyntheticSession {
        config: config.clone(),
        pcm,
        gaze,
        face,
        tracks,
    })
}

/// Column names of the raw gaze observation file.
pub fn gaze_columns() -> Vec<String> {
    let mut c = Vec::new();
    for eye in ["left", "right"] {
        for f in [
            "corner0_x", "corner0_y", "corner1_x", "corner1_y", "pupil_x", "pupil_y", "iris_radius",
        ] {
            c.push(format!("{eye}_{f}"));
        }
    }
    c
}

pub fn face_columns() -> Vec<String> {
    (0..FACE_DIM).map(|i| format!("c{i}")).collect()
}

fn gaze_rows(obs: &[[EyeObservation; 2]]) -> Tensor<f64> {
    let data = obs
        .iter()
        .flat_map(|pair| {
            pair.iter().flat_map(|e| {
                [
                    e.left_corner[0],
                    e.left_corner[1],
                    e.right_corner[0],
                    e.right_corner[1],
                    e.pupil[0],
                    e.pupil[1],
                    e.iris_radius,
                ]
            })
        })
        .collect();
    Tensor::new(vec![obs.len(), 14], data).unwrap()
}

fn gaze_from_rows(values: &Tensor<f64>) -> Result<Vec<[EyeObservation; 2]>> {
    if values.channels() != 14 {
        return Err(Error::invalid("gaze observation files have 14 value columns"));
    }
    Ok(values
        .data()
        .chunks(14)
        .map(|r| {
            std::array::from_fn(|e| {
                let v = &r[e * 7..e * 7 + 7];
                EyeObservation {
                    left_corner: [v[0], v[1]],
                    right_corner: [v[2], v[3]],
                    pupil: [v[4], v[5]],
                    iris_radius: v[6],
                }
            })
        })
        .collect())
}

impl SyntheticSession {
    /// Frontend features aligned with the coefficients.
    pub fn aligned(&self) -> Result<AlignedClip> {
        clip_from_streams(&self.pcm, &self.gaze, &self.face)
    }

    pub fn landmarks(&self) -> Result<SyntheticLandmarkSet> {
        LandmarkDecoder::for_subject(self.config.subject)?.decode(&self.face)
    }

    /// Writes `<name>.wav`, `<name>.gaze.csv` and `<name>.face.csv`.
    pub fn write(&self, dir: &Path, name: &str) -> Result<SessionFiles> {
        let files = SessionFiles::new(dir, name);
        write_wav(&files.wav, &self.pcm)?;
        write_series(
            &files.gaze,
            &gaze_columns(),
            &TimeSeries::regular(FRAME_RATE, gaze_rows(&self.gaze))?,
        )?;
        write_series(
            &files.face,
            &face_columns(),
            &TimeSeries::regular(FRAME_RATE, self.face.clone())?,
        )?;
        Ok(files)
    }
}

/// Paths of one stored session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionFiles {
    pub wav: PathBuf,
    pub gaze: PathBuf,
    pub face: PathBuf,
}

impl SessionFiles {
    pub fn new(dir: &Path, name: &str) -> Self {
        SessionFiles {
            wav: dir.join(format!("{name}.wav")),
            gaze: dir.join(format!("{name}.gaze.csv")),
            face: dir.join(format!("{name}.face.csv")),
        }
    }

    /// Reads the files back and runs the frontends and alignment.
    pub fn featurize(&self) -> Result<AlignedClip> {
        let pcm = read_wav(&self.wav)?;
        let mel = mel_spectrogram(&pcm)?;
        let (_, gaze) = read_series(&self.gaze)?;
        let (_, face) = read_series(&self.face)?;
        let features = gaze_features(&gaze_from_rows(&gaze.values)?)?;
        let gaze = TimeSeries::new(gaze.times, features.frames)?;
        align_streams(&mel, &gaze, &face)
    }

    /// Like [`featurize`](Self::featurize) without the coefficient file; the
    /// returned clip carries zero coefficients.
    pub fn featurize_inputs(&self) -> Result<AlignedClip> {
        let pcm = read_wav(&self.wav)?;
        let mel = mel_spectrogram(&pcm)?;
        let (_, gaze) = read_series(&self.gaze)?;
        let features = gaze_features(&gaze_from_rows(&gaze.values)?)?;
        let n = gaze.times.len();
        let face = TimeSeries::new(gaze.times.clone(), Tensor::zeros(&[n, FACE_DIM]))?;
        let gaze = TimeSeries::new(gaze.times, features.frames)?;
        align_streams(&mel, &gaze, &face)
    }
}

fn clip_from_streams(
    pcm: &PcmClip,
    gaze: &[[EyeObservation; 2]],
    face: &Tensor<f64>,
) -> Result<AlignedClip> {
    let mel = mel_spectrogram(pcm)?;
    let g = gaze_features(gaze)?;
    align_streams(
        &mel,
        &TimeSeries::regular(FRAME_RATE, g.frames)?,
        &TimeSeries::regular(FRAME_RATE, face.clone())?,
    )
}

/// Train or held-out membership of a stored session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Heldout,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Heldout => "heldout",
        }
    }
}

/// One manifest line: `name split style subject seed duration`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub split: Split,
    pub config: WorldConfig,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# name split style subject seed duration_seconds")?;
    for e in entries {
        writeln!(
            f,
            "{} {} {} {} {} {}",
            e.name,
            e.split.name(),
            e.config.style,
            e.config.subject,
            e.config.seed,
            e.config.duration
        )?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)?;
    let section = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::format(&section, format!("line {}: {what}", i + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let split = match f[1] {
            "train" => Split::Train,
            "heldout" => Split::Heldout,
            _ => return Err(bad("split must be train or heldout")),
        };
        let style = f[2].parse().map_err(|_| bad("bad style"))?;
        let subject = f[3].parse().map_err(|_| bad("bad subject"))?;
        let seed = f[4].parse().map_err(|_| bad("bad seed"))?;
        let duration = f[5].parse().map_err(|_| bad("bad duration"))?;
        out.push(ManifestEntry {
            name: f[0].to_string(),
            split,
            config: WorldConfig::new(seed, duration, style, subject),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
