use super::mel::frame_time;
use super::{AlignedClip, MelFrameSequence};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A timestamped multichannel stream at an arbitrary (monotone) rate.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    /// `[N, D]`, one row per timestamp.
    pub values: Tensor<f64>,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Tensor<f64>) -> Result<Self> {
        if values.shape().len() != 2 || values.shape()[0] != times.len() {
            return Err(Error::invalid(format!(
                "{} timestamps for values of shape {:?}",
                times.len(),
                values.shape()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("timestamps must increase strictly"));
        }
        Ok(TimeSeries { times, values })
    }

    /// Regular stream at `rate` Hz starting at time 0.
    pub fn regular(rate: f64, values: Tensor<f64>) -> Result<Self> {
        let times = (0..values.shape()[0]).map(|i| i as f64 / rate).collect();
        Self::new(times, values)
    }

    pub fn width(&self) -> usize {
        self.values.channels()
    }

    fn span(&self) -> Option<(f64, f64)> {
        Some((*self.times.first()?, *self.times.last()?))
    }

    /// Linear interpolation at each of `at` (all assumed inside the span).
    fn sample(&self, at: &[f64]) -> Vec<f64> {
        let d = self.width();
        let mut out = Vec::with_capacity(at.len() * d);
        let mut j = 0;
        for &t in at {
            while j + 1 < self.times.len() && self.times[j + 1] <= t {
                j += 1;
            }
            let a = self.values.row(j);
            if self.times[j] == t || j + 1 == self.times.len() {
                out.extend_from_slice(a);
                continue;
            }
            let b = self.values.row(j + 1);
            let w = (t - self.times[j]) / (self.times[j + 1] - self.times[j]);
            out.extend(a.iter().zip(b).map(|(&x, &y)| x + w * (y - x)));
        }
        out
    }
}

/// Resamples gaze and face onto the audio frame clock and truncates all
/// three streams to their common interval.
pub fn align_streams(
    audio: &MelFrameSequence,
    gaze: &TimeSeries,
    face: &TimeSeries,
) -> Result<AlignedClip> {
    let (Some(gs), Some(fs)) = (gaze.span(), face.span()) else {
        return Err(Error::invalid("empty gaze or face stream"));
    };
    let start = gs.0.max(fs.0);
    let end = gs.1.min(fs.1);
    let frames: Vec<usize> = (0..audio.len())
        .filter(|&i| {
            let t = frame_time(i);
            t >= start && t <= end
        })
        .collect();
    if frames.is_empty() {
        return Err(Error::invalid("streams do not overlap in time"));
    }
    let times: Vec<f64> = frames.iter().map(|&i| frame_time(i)).collect();
    let t = frames.len();
    let a: Vec<f64> = frames
        .iter()
        .flat_map(|&i| audio.frames.row(i).iter().copied())
        .collect();
    AlignedClip::new(
        Tensor::new(vec![t, audio.frames.channels()], a)?,
        Tensor::new(vec![t, gaze.width()], gaze.sample(&times))?,
        Tensor::new(vec![t, face.width()], face.sample(&times))?,
    )
}
