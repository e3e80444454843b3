//! Frame-by-frame causal inference at the 100 Hz frame clock.
//!
//! Each TCN keeps, per dilated layer, a ring of the last `(K-1)·d + 1`
//! layer inputs, so one frame costs one column per convolution instead of a
//! recompute over the receptive field. Columns are accumulated in the same
//! order as the offline kernels, which makes streamed output bit-identical
//! to [`Model::infer`] on causal models.

mod latency;

pub use latency::LatencyStats;

use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::features::{AUDIO_DIM, FACE_DIM, GAZE_DIM};
use crate::model::{Model, Normalization, TcnLayout};
use crate::real::Real;
use crate::tensor::kernels::{conv_column, transpose_kernel};
use crate::tensor::{leaky_relu_scalar, softmax_in_place, Tensor};

#[derive(Debug, Clone)]
struct Conv<F> {
    cin: usize,
    cout: usize,
    taps: usize,
    dilation: usize,
    wt: Vec<F>,
    bias: Option<Vec<F>>,
}

impl<F: Real> Conv<F> {
    fn new(model: &Model<F>, (w, b): (usize, Option<usize>), dilation: usize) -> Self {
        let t = model.params().tensors();
        let (cout, cin, taps) = (t[w].shape()[0], t[w].shape()[1], t[w].shape()[2]);
        Conv {
            cin,
            cout,
            taps,
            dilation,
            wt: transpose_kernel(t[w].data(), cout, cin, taps),
            bias: b.map(|b| t[b].data().to_vec()),
        }
    }

    fn pointwise(&self, x: &[F], out: &mut [F]) {
        conv_column(self.cin, self.cout, 1, &self.wt, self.bias.as_deref(), |_| Some(x), out);
    }
}

/// Weights of one TCN, transposed for column evaluation.
#[derive(Debug, Clone)]
struct TcnPlan<F> {
    resize: Conv<F>,
    layers: Vec<Conv<F>>,
    heads: Vec<Conv<F>>,
}

impl<F: Real> TcnPlan<F> {
    fn new(model: &Model<F>, layout: &TcnLayout, heads: usize) -> Self {
        TcnPlan {
            resize: Conv::new(model, layout.resize, 1),
            layers: layout.layers.iter().map(|&(w, b, d)| Conv::new(model, (w, b), d)).collect(),
            heads: layout.heads[..heads].iter().map(|&(w, b, _)| Conv::new(model, (w, b), 1)).collect(),
        }
    }

    fn channels(&self) -> usize {
        self.resize.cout
    }
}

/// Per-layer input history of one TCN.
#[derive(Debug, Clone)]
struct TcnState<F> {
    rings: Vec<Ring<F>>,
    h: Vec<F>,
    c: Vec<F>,
}

#[derive(Debug, Clone)]
struct Ring<F> {
    data: Vec<F>,
    width: usize,
    cap: usize,
    /// Slot of the newest frame.
    head: usize,
    seen: usize,
}

impl<F: Real> Ring<F> {
    fn new(width: usize, cap: usize) -> Self {
        Ring {
            data: vec![F::zero(); width * cap],
            width,
            cap,
            head: cap - 1,
            seen: 0,
        }
    }

    fn push(&mut self, frame: &[F]) {
        self.head = (self.head + 1) % self.cap;
        self.data[self.head * self.width..][..self.width].copy_from_slice(frame);
        self.seen += 1;
    }

    /// Frame `back` steps before the newest one, if it exists.
    fn back(&self, back: usize) -> Option<&[F]> {
        (back < self.seen.min(self.cap)).then(|| {
            let slot = (self.head + self.cap - back) % self.cap;
            &self.data[slot * self.width..][..self.width]
        })
    }

    fn clear(&mut self) {
        self.seen = 0;
        self.head = self.cap - 1;
    }
}

impl<F: Real> TcnState<F> {
    fn new(plan: &TcnPlan<F>) -> Self {
        let c = plan.channels();
        TcnState {
            rings: plan
                .layers
                .iter()
                .map(|l| Ring::new(c, (l.taps - 1) * l.dilation + 1))
                .collect(),
            h: vec![F::zero(); c],
            c: vec![F::zero(); c],
        }
    }

    /// Advances one frame; head outputs are written to `outs`.
    fn step(&mut self, plan: &TcnPlan<F>, x: &[F], outs: &mut [Vec<F>]) {
        let slope = F::of(crate::model::LEAKY_SLOPE);
        plan.resize.pointwise(x, &mut self.h);
        for v in self.h.iter_mut() {
            *v = leaky_relu_scalar(*v, slope);
        }
        for (layer, ring) in plan.layers.iter().zip(&mut self.rings) {
            ring.push(&self.h);
            let ring = &*ring;
            conv_column(
                layer.cin,
                layer.cout,
                layer.taps,
                &layer.wt,
                layer.bias.as_deref(),
                |k| ring.back((layer.taps - 1 - k) * layer.dilation),
                &mut self.c,
            );
            for (hv, &cv) in self.h.iter_mut().zip(&self.c) {
                *hv += leaky_relu_scalar(cv, slope);
            }
        }
        for (head, out) in plan.heads.iter().zip(outs.iter_mut()) {
            head.pointwise(&self.h, out);
        }
    }

    fn clear(&mut self) {
        self.rings.iter_mut().for_each(Ring::clear);
    }
}

#[derive(Debug, Clone)]
enum Graph<F> {
    Regression(TcnPlan<F>),
    Latent {
        encoders: Vec<TcnPlan<F>>,
        mixture: Option<TcnPlan<F>>,
        face: TcnPlan<F>,
    },
}

/// Read-only prepared weights; one plan can drive many sessions.
#[derive(Debug, Clone)]
pub struct StreamPlan<F> {
    graph: Graph<F>,
    norm: Normalization,
    latent: usize,
    uses: [bool; 2],
    receptive_field: usize,
}

impl<F: Real> StreamPlan<F> {
    pub fn new(model: &Model<F>) -> Result<Self> {
        if model.config().lookahead != 0 {
            return Err(Error::invalid(format!(
                "streaming needs a causal model, this one looks {} frames ahead per layer",
                model.config().lookahead
            )));
        }
        if model.params().tensors().iter().any(|t| !t.is_finite()) {
            return Err(Error::State("model parameters contain non-finite values".into()));
        }
        let l = model.layouts();
        let mods = model.variant().modalities();
        let graph = match &l.regression {
            Some(reg) => Graph::Regression(TcnPlan::new(model, reg, 1)),
            None => Graph::Latent {
                encoders: mods
                    .iter()
                    .map(|m| TcnPlan::new(model, l.encoders[m.index()].as_ref().unwrap(), 1))
                    .collect(),
                mixture: l.mixture.as_ref().map(|mix| TcnPlan::new(model, mix, 1)),
                face: TcnPlan::new(model, l.face.as_ref().unwrap(), 1),
            },
        };
        let mut uses = [false; 2];
        if matches!(graph, Graph::Regression(_)) {
            uses = [true; 2];
        }
        for m in mods {
            uses[m.index()] = true;
        }
        Ok(StreamPlan {
            graph,
            norm: model.norm.clone(),
            latent: model.config().latent,
            uses,
            receptive_field: model.receptive_field(),
        })
    }

    /// Frames of history that influence one output.
    pub fn receptive_field(&self) -> usize {
        self.receptive_field
    }
}

/// One streamed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamFrame<F> {
    pub coeffs: Vec<F>,
    pub latency: Duration,
    /// The input was non-finite; `coeffs` repeats the previous output.
    pub rejected: bool,
}

/// Causal per-frame inference state over a shared [`StreamPlan`].
#[derive(Debug, Clone)]
pub struct StreamSession<F> {
    plan: Arc<StreamPlan<F>>,
    encoders: Vec<TcnState<F>>,
    mixture: Option<TcnState<F>>,
    face: TcnState<F>,
    audio: Vec<F>,
    gaze: Vec<F>,
    joint: Vec<F>,
    heads: Vec<Vec<Vec<F>>>,
    logits: [Vec<F>; 1],
    group: Vec<F>,
    pi: Vec<Vec<F>>,
    z: [Vec<F>; 1],
    out: [Vec<F>; 1],
    frames: u64,
    rejected: u64,
    latency: LatencyStats,
}

impl<F: Real> StreamSession<F> {
    pub fn new(model: &Model<F>) -> Result<Self> {
        Ok(Self::with_plan(Arc::new(StreamPlan::new(model)?)))
    }

    pub fn with_plan(plan: Arc<StreamPlan<F>>) -> Self {
        let l = plan.latent;
        let (encoders, mixture, face, width) = match &plan.graph {
            Graph::Regression(reg) => (vec![], None, TcnState::new(reg), 0),
            Graph::Latent { encoders, mixture, face } => (
                encoders.iter().map(TcnState::new).collect(),
                mixture.as_ref().map(TcnState::new),
                TcnState::new(face),
                encoders.len(),
            ),
        };
        StreamSession {
            encoders,
            mixture,
            face,
            audio: vec![F::zero(); AUDIO_DIM],
            gaze: vec![F::zero(); GAZE_DIM],
            joint: vec![F::zero(); AUDIO_DIM + GAZE_DIM],
            heads: (0..width).map(|_| vec![vec![F::zero(); l]]).collect(),
            logits: [vec![F::zero(); width * l]],
            group: vec![F::zero(); width],
            pi: (0..width).map(|_| vec![F::zero(); l]).collect(),
            z: [vec![F::zero(); l]],
            out: [vec![F::zero(); FACE_DIM]],
            frames: 0,
            rejected: 0,
            latency: LatencyStats::new(),
            plan,
        }
    }

    pub fn plan(&self) -> &Arc<StreamPlan<F>> {
        &self.plan
    }

    /// Frames accepted since the last reset.
    pub fn frames(&self) -> u64 {
        self.frames
    }

    /// Non-finite frames rejected since the last reset.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn latency(&self) -> &LatencyStats {
        &self.latency
    }

    /// Forgets all history; the next frame is treated as frame 0.
    pub fn reset(&mut self) {
        self.encoders.iter_mut().for_each(TcnState::clear);
        if let Some(m) = &mut self.mixture {
            m.clear();
        }
        self.face.clear();
        self.out[0].fill(F::zero());
        self.frames = 0;
        self.rejected = 0;
        self.latency = LatencyStats::new();
    }

    /// Consumes one raw (unnormalised) audio and gaze frame and emits one
    /// coefficient frame.
    pub fn step(&mut self, audio: &[f64], gaze: &[f64]) -> Result<StreamFrame<F>> {
        if audio.len() != AUDIO_DIM || gaze.len() != GAZE_DIM {
            return Err(Error::invalid(format!(
                "frame widths {}+{}, expected {AUDIO_DIM}+{GAZE_DIM}",
                audio.len(),
                gaze.len()
            )));
        }
        let start = Instant::now();
        let used = |m: usize, v: &[f64]| !self.plan.uses[m] || v.iter().all(|x| x.is_finite());
        if !(used(0, audio) && used(1, gaze)) {
            self.rejected += 1;
            let latency = start.elapsed();
            self.latency.record(latency);
            return Ok(StreamFrame {
                coeffs: self.out[0].clone(),
                latency,
                rejected: true,
            });
        }
        self.plan.norm.audio.apply_row(audio, &mut self.audio);
        self.plan.norm.gaze.apply_row(gaze, &mut self.gaze);
        self.joint[..AUDIO_DIM].copy_from_slice(&self.audio);
        self.joint[AUDIO_DIM..].copy_from_slice(&self.gaze);
        let plan = Arc::clone(&self.plan);
        match &plan.graph {
            Graph::Regression(reg) => self.face.step(reg, &self.joint, &mut self.out),
            Graph::Latent { encoders, mixture, face } => {
                self.encode(&plan, encoders, mixture.as_ref());
                self.face.step(face, &self.z[0], &mut self.out);
            }
        }
        self.frames += 1;
        let latency = start.elapsed();
        self.latency.record(latency);
        Ok(StreamFrame {
            coeffs: self.out[0].clone(),
            latency,
            rejected: false,
        })
    }

    fn encode(&mut self, plan: &StreamPlan<F>, encoders: &[TcnPlan<F>], mixture: Option<&TcnPlan<F>>) {
        let l = plan.latent;
        let (audio, gaze) = (&self.audio, &self.gaze);
        let inputs: Vec<&[F]> = if encoders.len() == 2 {
            vec![audio, gaze]
        } else if plan.uses[0] {
            vec![audio]
        } else {
            vec![gaze]
        };
        for ((enc, state), (x, out)) in encoders
            .iter()
            .zip(&mut self.encoders)
            .zip(inputs.into_iter().zip(&mut self.heads))
        {
            state.step(enc, x, out);
        }
        let (Some(mix), Some(state)) = (mixture, &mut self.mixture) else {
            self.z[0].copy_from_slice(&self.heads[0][0]);
            return;
        };
        state.step(mix, &self.joint, &mut self.logits);
        let m = self.group.len();
        for d in 0..l {
            for (j, g) in self.group.iter_mut().enumerate() {
                *g = self.logits[0][j * l + d];
            }
            softmax_in_place(&mut self.group);
            for (j, g) in self.group.iter().enumerate() {
                self.pi[j][d] = *g;
            }
        }
        let p: Vec<&[F]> = self.pi.iter().map(Vec::as_slice).collect();
        let x: Vec<&[F]> = self.heads.iter().map(|h| h[0].as_slice()).collect();
        debug_assert_eq!(p.len(), m);
        crate::model::fuse_means(&p, &x, &mut self.z[0]);
    }

    /// Streams a whole `[T, 80]` / `[T, 4]` clip and stacks the outputs.
    pub fn run_clip(&mut self, audio: &Tensor<f64>, gaze: &Tensor<f64>) -> Result<Tensor<F>> {
        let t = audio.shape().first().copied().unwrap_or(0);
        if gaze.shape().first() != Some(&t) {
            return Err(Error::invalid("audio and gaze have different frame counts"));
        }
        let mut out = Vec::with_capacity(t * FACE_DIM);
        for i in 0..t {
            out.extend(self.step(audio.row(i), gaze.row(i))?.coeffs);
        }
        Tensor::new(vec![t, FACE_DIM], out)
    }
}

#[cfg(test)]
mod tests;
