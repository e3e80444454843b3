use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Per-channel z-score statistics estimated on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const MIN_STD: f64 = 1e-3;

impl ChannelStats {
    pub fn identity(width: usize) -> Self {
        ChannelStats {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    /// Statistics over the rows of several `[T, C]` tensors.
    pub fn fit<'a>(streams: impl IntoIterator<Item = &'a Tensor<f64>>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for x in streams {
            let c = x.channels();
            if sum.is_empty() {
                sum = vec![0.0; c];
                sq = vec![0.0; c];
            } else if sum.len() != c {
                return Err(Error::invalid("streams differ in width"));
            }
            for row in x.data().chunks(c) {
                for (i, &v) in row.iter().enumerate() {
                    sum[i] += v;
                    sq[i] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::invalid("no frames to estimate statistics"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt().max(MIN_STD))
            .collect();
        Ok(ChannelStats { mean, std })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_row<F: Real>(&self, row: &[f64], out: &mut [F]) {
        for (i, (o, &v)) in out.iter_mut().zip(row).enumerate() {
            *o = F::of((v - self.mean[i]) / self.std[i]);
        }
    }

    /// Normalized copy of a `[T, C]` stream in the working precision.
    pub fn apply<F: Real>(&self, x: &Tensor<f64>) -> Result<Tensor<F>> {
        let c = x.channels();
        if c != self.width() {
            return Err(Error::invalid(format!(
                "stream has {c} channels, statistics cover {}",
                self.width()
            )));
        }
        let mut out = vec![F::zero(); x.len()];
        for (row, o) in x.data().chunks(c).zip(out.chunks_mut(c)) {
            self.apply_row(row, o);
        }
        Tensor::new(x.shape().to_vec(), out)
    }
}
