use rand::Rng;

use crate::error::{Error, Result};
use crate::features::AlignedClip;

/// Draws fixed-length windows uniformly over every valid start position of
/// every clip long enough to hold one.
#[derive(Debug, Clone)]
pub struct WindowSampler {
    window: usize,
    /// `(clip index, number of valid starts)`
    spans: Vec<(usize, usize)>,
    total: usize,
}

impl WindowSampler {
    pub fn new(clips: &[AlignedClip], window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::invalid("window must be positive"));
        }
        let spans: Vec<_> = clips
            .iter()
            .enumerate()
            .filter(|(_, c)| c.len() >= window)
            .map(|(i, c)| (i, c.len() - window + 1))
            .collect();
        let total = spans.iter().map(|s| s.1).sum();
        if total == 0 {
            return Err(Error::invalid(format!("no clip holds a {window}-frame window")));
        }
        Ok(WindowSampler {
            window,
            spans,
            total,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// `(clip, start frame)`
    pub fn sample(&self, rng: &mut impl Rng) -> (usize, usize) {
        let mut k = rng.random_range(0..self.total);
        for &(clip, n) in &self.spans {
            if k < n {
                return (clip, k);
            }
            k -= n;
        }
        unreachable!("index below total")
    }
}
