//! Latent factor tracks on the 100 Hz frame clock.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Style, SubjectProfile};

/// Largest per-frame change of any bounded track.
pub const MAX_SLEW: f64 = 0.4;

/// Ground-truth factors of one session, one entry per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTracks {
    /// Speech envelope `s(t)` in `[0, 1]`; exactly 0 outside speech.
    pub speech: Vec<f64>,
    /// Four slowly varying spectral band amplitudes in `[0, 1]`.
    pub phones: Vec<[f64; 4]>,
    /// Anticipatory mouth opening before some utterances, in `[0, 1]`.
    pub onset: Vec<f64>,
    /// Relaxed, slightly parted lips during some pauses, in `[0, 1]`.
    pub rest: Vec<f64>,
    /// Gaze direction `(x, y)` of the left then right eye, in normalized
    /// eye coordinates, before smile and blink effects on the tracker.
    pub gaze: Vec<[f64; 4]>,
    /// Smile/squint factor `e(t)` in `[0, 1]`.
    pub expression: Vec<f64>,
    /// Eyelid closure from blinks in `[0, 1]`.
    pub blink: Vec<f64>,
    /// Speech segments as `[start, end)` frame ranges.
    pub utterances: Vec<(usize, usize)>,
    /// Smile episodes as `[start, end)` frame ranges.
    pub smiles: Vec<(usize, usize)>,
}

impl FactorTracks {
    pub fn len(&self) -> usize {
        self.speech.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speech.is_empty()
    }

    pub fn is_speaking(&self, t: usize) -> bool {
        self.utterances.iter().any(|&(a, b)| t >= a && t < b)
    }

    /// Smile episodes whose peak frame lies outside every utterance.
    pub fn silent_smiles(&self) -> usize {
        self.smiles
            .iter()
            .filter(|&&(a, b)| !self.is_speaking((a + b) / 2))
            .count()
    }
}

fn frames(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> usize {
    (rng.random_range(lo..hi) * 100.0).round() as usize
}

/// Raised-cosine blend from `a` (u=0) to `b` (u=1).
fn ease(a: f64, b: f64, u: f64) -> f64 {
    a + (b - a) * 0.5 * (1.0 - (std::f64::consts::PI * u.clamp(0.0, 1.0)).cos())
}

/// Adds a raised-cosine bump of `peak` over `[start, start + len)`, with
/// `ramp` frames of attack and release, keeping the running maximum.
fn bump(track: &mut [f64], start: usize, len: usize, ramp: usize, peak: f64) {
    let ramp = ramp.max(1).min(len / 2).max(1);
    for i in 0..len {
        let Some(v) = track.get_mut(start + i) else { break };
        let u = if i < ramp {
            i as f64 / ramp as f64
        } else if i + ramp >= len {
            (len - 1 - i) as f64 / ramp as f64
        } else {
            1.0
        };
        *v = v.max(ease(0.0, peak, u));
    }
}

fn utterances(rng: &mut ChaCha8Rng, n: usize, style: Style) -> Vec<(usize, usize)> {
    let (speech, pause) = match style {
        Style::Descriptive => ((2.0, 5.0), (0.25, 0.6)),
        Style::Conversational => ((0.8, 3.0), (1.0, 3.0)),
    };
    let mut out = Vec::new();
    let mut t = frames(rng, 0.3, 1.0);
    while t < n {
        let len = frames(rng, speech.0, speech.1);
        let end = (t + len).min(n);
        if end - t >= 30 {
            out.push((t, end));
        }
        t = end + frames(rng, pause.0, pause.1);
    }
    out
}

fn speech_and_phones(
    rng: &mut ChaCha8Rng,
    n: usize,
    utts: &[(usize, usize)],
    style: Style,
    subject: &SubjectProfile,
) -> (Vec<f64>, Vec<[f64; 4]>) {
    let mut s = vec![0.0; n];
    let mut phones = vec![[0.0; 4]; n];
    let rate = subject.syllable_scale
        * match style {
            Style::Descriptive => 0.85,
            Style::Conversational => 1.0,
        };
    let mut prev_phone = [0.5; 4];
    let mut centres: Vec<(usize, [f64; 4])> = Vec::new();
    for &(a, b) in utts {
        // Syllable boundaries; interior ones close the lips with probability 0.4.
        let mut bounds = vec![a];
        loop {
            let last = *bounds.last().unwrap();
            let len = ((rng.random_range(0.12..0.25) * rate) * 100.0).round() as usize;
            if last + len + 10 > b {
                bounds.push(b);
                break;
            }
            bounds.push(last + len);
        }
        let floor: Vec<f64> = (0..bounds.len())
            .map(|j| {
                if j == 0 || j + 1 == bounds.len() || rng.random_bool(0.4) {
                    0.0
                } else {
                    rng.random_range(0.15..0.35)
                }
            })
            .collect();
        for j in 0..bounds.len() - 1 {
            let (lo, hi) = (bounds[j], bounds[j + 1]);
            let peak: f64 = rng.random_range(0.55..1.0);
            let mid = (lo + hi) / 2;
            for (t, v) in s.iter_mut().enumerate().take(hi).skip(lo) {
                *v = if t < mid {
                    ease(floor[j], peak, (t - lo) as f64 / (mid - lo).max(1) as f64)
                } else {
                    ease(peak, floor[j + 1], (t - mid) as f64 / (hi - mid).max(1) as f64)
                };
            }
            let mut p = [0.0; 4];
            for (k, pk) in p.iter_mut().enumerate() {
                *pk = 0.35 * prev_phone[k] + 0.65 * rng.random_range(0.0..1.0);
            }
            prev_phone = p;
            centres.push((mid, p));
        }
    }
    // Phones interpolate linearly between syllable centres and hold at the ends.
    let mut c = 0;
    for (t, ph) in phones.iter_mut().enumerate() {
        if centres.is_empty() {
            *ph = [0.5; 4];
            continue;
        }
        while c + 1 < centres.len() && centres[c + 1].0 <= t {
            c += 1;
        }
        let (t0, p0) = centres[c];
        *ph = if t <= t0 || c + 1 == centres.len() {
            p0
        } else {
            let (t1, p1) = centres[c + 1];
            let u = (t - t0) as f64 / (t1 - t0) as f64;
            std::array::from_fn(|k| p0[k] + (p1[k] - p0[k]) * u)
        };
    }
    (s, phones)
}

fn onsets(rng: &mut ChaCha8Rng, n: usize, utts: &[(usize, usize)], subject: &SubjectProfile) -> Vec<f64> {
    let mut o = vec![0.0; n];
    for &(a, _) in utts {
        if !rng.random_bool(subject.onset_rate) {
            continue;
        }
        let lead = frames(rng, 0.15, 0.35).min(a);
        let peak = rng.random_range(0.2..0.4);
        for i in 0..lead {
            o[a - lead + i] = ease(0.0, peak, i as f64 / lead as f64);
        }
        for i in 0..10.min(n - a) {
            o[a + i] = ease(peak, 0.0, i as f64 / 10.0);
        }
    }
    o
}

/// Lips settle slightly apart in most pauses longer than 0.4 s, so silence
/// alone does not mean closed lips.
fn rest_gaps(rng: &mut ChaCha8Rng, n: usize, utts: &[(usize, usize)]) -> Vec<f64> {
    let mut r = vec![0.0; n];
    let mut last = 0;
    for &(a, b) in utts.iter().chain([&(n, n)]) {
        if a >= last + 40 && rng.random_bool(0.7) {
            let peak = rng.random_range(0.12..0.3);
            bump(&mut r, last + 8, a - last - 16, 12, peak);
        }
        last = b;
    }
    r
}

fn smiles(
    rng: &mut ChaCha8Rng,
    n: usize,
    utts: &[(usize, usize)],
    subject: &SubjectProfile,
) -> (Vec<f64>, Vec<(usize, usize)>) {
    let mut e = vec![0.0; n];
    let mut eps = Vec::new();
    let per_frame = subject.smiles_per_minute / 6000.0;
    let speaking = |t: usize| utts.iter().any(|&(a, b)| t >= a && t < b);
    let mut t = 0;
    while t < n {
        // Exponential gaps keep episodes independent of the speech timeline.
        let gap = (-rng.random_range(f64::EPSILON..1.0).ln() / per_frame) as usize;
        t += gap.max(1);
        let len = frames(rng, 0.8, 2.0);
        if t + len >= n {
            break;
        }
        eps.push((t, t + len));
        t += len + 20;
    }
    // Top up silent episodes so every minute holds at least five.
    let need = (5.0 * n as f64 / 6000.0).ceil() as usize;
    let mut silent = eps.iter().filter(|&&(a, b)| !speaking((a + b) / 2)).count();
    let pauses: Vec<(usize, usize)> = {
        let mut p = Vec::new();
        let mut last = 0;
        for &(a, b) in utts {
            if a > last + 90 {
                p.push((last, a));
            }
            last = b;
        }
        if n > last + 90 {
            p.push((last, n));
        }
        p
    };
    let mut k = 0;
    while silent < need && !pauses.is_empty() && k < 4 * pauses.len() {
        let (a, b) = pauses[rng.random_range(0..pauses.len())];
        k += 1;
        let len = frames(rng, 0.8, 1.5).min(b - a - 10);
        let start = a + 5 + rng.random_range(0..=(b - a - 10 - len));
        if eps.iter().any(|&(x, y)| start < y + 20 && x < start + len + 20) {
            continue;
        }
        eps.push((start, start + len));
        silent += 1;
    }
    eps.sort_unstable();
    for &(a, b) in &eps {
        let peak = rng.random_range(0.5..1.0);
        bump(&mut e, a, b - a, 25, peak);
    }
    (e, eps)
}

fn blinks(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut b = vec![0.0; n];
    let mut t = frames(rng, 0.5, 3.0);
    while t + 30 < n {
        let len = frames(rng, 0.15, 0.25);
        bump(&mut b, t, len, len / 2, 1.0);
        t += len + frames(rng, 1.5, 6.0);
    }
    b
}

/// Minimum-jerk move between two points; returns its length in frames.
fn saccade(track: &mut [[f64; 2]], start: usize, from: [f64; 2], to: [f64; 2]) -> usize {
    // Peak velocity of a minimum-jerk profile is 1.875 times the mean.
    let dist = (to[0] - from[0]).hypot(to[1] - from[1]);
    let len = ((1.875 * dist / (0.9 * MAX_SLEW)).ceil() as usize).max(3);
    for i in 0..len {
        let Some(p) = track.get_mut(start + i) else { break };
        let u = (i + 1) as f64 / len as f64;
        let w = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
        *p = [from[0] + (to[0] - from[0]) * w, from[1] + (to[1] - from[1]) * w];
    }
    len
}

fn gaze_path(rng: &mut ChaCha8Rng, n: usize, style: Style) -> Vec<[f64; 4]> {
    let mut g = vec![[0.0; 2]; n];
    let mut t = 0;
    let mut here = [0.0, 0.0];
    match style {
        Style::Conversational => {
            while t < n {
                let hold = frames(rng, 0.4, 1.8);
                for p in g.iter_mut().skip(t).take(hold) {
                    *p = here;
                }
                t += hold;
                let to = if rng.random_bool(0.2) {
                    // Look away from the partner.
                    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    [side * rng.random_range(0.45..0.7), rng.random_range(-0.35..0.1)]
                } else {
                    [rng.random_range(-0.25..0.25), rng.random_range(-0.15..0.15)]
                };
                t += saccade(&mut g, t, here, to);
                here = to;
            }
        }
        Style::Descriptive => {
            // Reading: left-to-right fixation steps along lines, then a
            // return sweep to the next line.
            let mut line = 0;
            while t < n {
                let y = -0.25 + 0.1 * (line % 6) as f64;
                let start = [-0.6, y];
                t += saccade(&mut g, t, here, start);
                here = start;
                while here[0] < 0.6 && t < n {
                    let hold = frames(rng, 0.15, 0.3);
                    for p in g.iter_mut().skip(t).take(hold) {
                        *p = here;
                    }
                    t += hold;
                    let to = [here[0] + rng.random_range(0.08..0.16), y];
                    t += saccade(&mut g, t, here, to);
                    here = to;
                }
                line += 1;
            }
        }
    }
    g.into_iter()
        .map(|[x, y]| [x + 0.04, y, x - 0.04, y])
        .collect()
}

pub(crate) fn generate(rng: &mut ChaCha8Rng, n: usize, style: Style, subject: &SubjectProfile) -> FactorTracks {
    let utts = utterances(rng, n, style);
    let (speech, phones) = speech_and_phones(rng, n, &utts, style, subject);
    let onset = match style {
        Style::Conversational => onsets(rng, n, &utts, subject),
        Style::Descriptive => vec![0.0; n],
    };
    let gaze = gaze_path(rng, n, style);
    let (expression, smiles) = match style {
        Style::Conversational => smiles(rng, n, &utts, subject),
        Style::Descriptive => (vec![0.0; n], Vec::new()),
    };
    let blink = blinks(rng, n);
    let rest = rest_gaps(rng, n, &utts);
    FactorTracks {
        speech,
        phones,
        onset,
        rest,
        gaze,
        expression,
        blink,
        utterances: utts,
        smiles,
    }
}
