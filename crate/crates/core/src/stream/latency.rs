use std::time::Duration;

const BUCKET_NS: u64 = 1_000;
const BUCKETS: usize = 100_000;

/// Fixed-size latency accumulator: 1 µs buckets up to 100 ms plus an
/// overflow bucket, so memory does not grow with stream length.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyStats {
    counts: Vec<u32>,
    overflow: u64,
    count: u64,
    total_ns: u128,
    max: Duration,
}

impl Default for LatencyStats {
    fn default() -> Self {
        Self::new()
    }
}

impl LatencyStats {
    pub fn new() -> Self {
        LatencyStats {
            counts: vec![0; BUCKETS],
            overflow: 0,
            count: 0,
            total_ns: 0,
            max: Duration::ZERO,
        }
    }

    pub fn record(&mut self, d: Duration) {
        let ns = d.as_nanos();
        match usize::try_from(ns / BUCKET_NS as u128) {
            Ok(b) if b < BUCKETS => self.counts[b] = self.counts[b].saturating_add(1),
            _ => self.overflow += 1,
        }
        self.count += 1;
        self.total_ns += ns;
        self.max = self.max.max(d);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> Duration {
        if self.count == 0 {
            return Duration::ZERO;
        }
        Duration::from_nanos((self.total_ns / self.count as u128) as u64)
    }

    pub fn max(&self) -> Duration {
        self.max
    }

    /// Upper edge of the bucket holding quantile `q`; the max beyond 100 ms.
    pub fn quantile(&self, q: f64) -> Duration {
        if self.count == 0 {
            return Duration::ZERO;
        }
        let rank = ((q.clamp(0.0, 1.0) * self.count as f64).ceil() as u64).max(1);
        let mut seen = 0u64;
        for (b, &c) in self.counts.iter().enumerate() {
            seen += c as u64;
            if seen >= rank {
                return Duration::from_nanos((b as u64 + 1) * BUCKET_NS).min(self.max);
            }
        }
        self.max
    }

    pub fn p99(&self) -> Duration {
        self.quantile(0.99)
    }

    /// Frames per second of pure compute at the mean latency.
    pub fn throughput(&self) -> f64 {
        let m = self.mean().as_secs_f64();
        if m > 0.0 {
            1.0 / m
        } else {
            f64::INFINITY
        }
    }
}
