//! Audio and gaze frontends and stream alignment on the 100 Hz frame clock.

mod align;
mod gaze;
pub mod mel;
mod norm;

pub use align::{align_streams, TimeSeries};
pub use gaze::{gaze_features, normalize_gaze, EyeObservation, GazeFrameSequence};
pub use mel::{mel_spectrogram, MelFrontend};
pub use norm::ChannelStats;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const AUDIO_DIM: usize = mel::MEL_BANDS;
pub const GAZE_DIM: usize = 4;
pub const FACE_DIM: usize = 256;
pub const FRAME_RATE: f64 = 100.0;

/// Mono PCM audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcmClip {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl PcmClip {
    pub fn new(sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(PcmClip {
            sample_rate,
            samples,
        })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Log-mel features, `[T, 80]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFrameSequence {
    pub frames: Tensor<f64>,
}

impl MelFrameSequence {
    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Synchronized model inputs and targets, all of length `T`:
/// audio `[T, 80]`, gaze `[T, 4]`, face coefficients `[T, 256]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedClip {
    pub audio: Tensor<f64>,
    pub gaze: Tensor<f64>,
    pub face: Tensor<f64>,
}

impl AlignedClip {
    pub fn new(audio: Tensor<f64>, gaze: Tensor<f64>, face: Tensor<f64>) -> Result<Self> {
        let t = audio.shape()[0];
        let checks = [
            ("audio", &audio, AUDIO_DIM),
            ("gaze", &gaze, GAZE_DIM),
            ("face", &face, FACE_DIM),
        ];
        for (name, x, width) in checks {
            if x.shape() != [t, width] {
                return Err(Error::invalid(format!(
                    "{name} stream has shape {:?}, expected [{t}, {width}]",
                    x.shape()
                )));
            }
        }
        Ok(AlignedClip { audio, gaze, face })
    }

    pub fn len(&self) -> usize {
        self.audio.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Frames `[start, start + len)` of every stream.
    pub fn window(&self, start: usize, len: usize) -> AlignedClip {
        let cut = |x: &Tensor<f64>| {
            let c = x.channels();
            Tensor::new(vec![len, c], x.data()[start * c..(start + len) * c].to_vec()).unwrap()
        };
        AlignedClip {
            audio: cut(&self.audio),
            gaze: cut(&self.gaze),
            face: cut(&self.face),
        }
    }
}
