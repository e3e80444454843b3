use std::path::Path;

use crate::error::{Error, Result};
use crate::features::PcmClip;

const SCALE: f64 = 32768.0;

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::UnsupportedFormat(format!("{}: {other}", path.display())),
    }
}

/// Reads a 16-bit little-endian mono PCM file.
///
/// Samples are scaled by `1 / 32768`. The sample rate is passed through;
/// the mel frontend rejects anything other than 16 kHz.
pub fn read_wav(path: &Path) -> Result<PcmClip> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(Error::UnsupportedFormat(format!(
            "{}: expected 16-bit integer mono, found {} channel(s) of {}-bit {:?}",
            path.display(),
            spec.channels,
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / SCALE))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| wav_error(path, e))?;
    PcmClip::new(spec.sample_rate, samples)
}

/// Writes a clip as 16-bit mono PCM, rounding and clipping each sample.
pub fn write_wav(path: &Path, clip: &PcmClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in &clip.samples {
        let q = (s * SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        w.write_sample(q).map_err(|e| wav_error(path, e))?;
    }
    w.finalize().map_err(|e| wav_error(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantized_samples_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let samples: Vec<f64> = (-5..5).map(|i| i as f64 * 1000.0 / SCALE).collect();
        let clip = PcmClip::new(16000, samples).unwrap();
        write_wav(&p, &clip).unwrap();
        assert_eq!(read_wav(&p).unwrap(), clip);
    }

    #[test]
    fn stereo_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&p), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn garbage_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.wav");
        std::fs::write(&p, b"definitely not RIFF").unwrap();
        assert!(read_wav(&p).unwrap_err().is_data_error());
    }
}
