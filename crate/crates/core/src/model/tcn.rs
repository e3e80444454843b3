//! Residual dilated TCN: a 1×1 resize convolution with leaky ReLU, a stack
//! of `h ← h + lrelu(conv_d(h))` layers, and one or more 1×1 output heads.

use super::params::{ParamSet, ParamSpec};
use crate::error::Result;
use crate::real::Real;
use crate::tensor::{conv1d_dilated, leaky_relu_scalar, Padding, Tape, Tensor, Var};

pub(crate) const SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct TcnShape {
    pub prefix: String,
    pub input: usize,
    pub channels: usize,
    pub taps: usize,
    pub dilations: Vec<usize>,
    pub heads: Vec<usize>,
    pub bias: bool,
}

/// Parameter indices of one TCN inside a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct TcnLayout {
    pub input: usize,
    pub channels: usize,
    pub taps: usize,
    pub resize: (usize, Option<usize>),
    pub layers: Vec<(usize, Option<usize>, usize)>,
    pub heads: Vec<(usize, Option<usize>, usize)>,
}

impl TcnShape {
    pub fn specs(&self) -> Vec<ParamSpec> {
        let p = &self.prefix;
        let mut out = Vec::new();
        let mut conv = |name: String, cout: usize, cin: usize, k: usize| {
            out.push(ParamSpec {
                name: format!("{name}.w"),
                shape: vec![cout, cin, k],
                bound: (1.0 / (cin * k) as f64).sqrt(),
            });
            if self.bias {
                out.push(ParamSpec {
                    name: format!("{name}.b"),
                    shape: vec![cout],
                    bound: 0.0,
                });
            }
        };
        conv(format!("{p}.in"), self.channels, self.input, 1);
        for l in 0..self.dilations.len() {
            conv(format!("{p}.layer{l}"), self.channels, self.channels, self.taps);
        }
        for (h, &width) in self.heads.iter().enumerate() {
            conv(format!("{p}.out{h}"), width, self.channels, 1);
        }
        out
    }

    pub fn layout<F: Real>(&self, params: &ParamSet<F>) -> Option<TcnLayout> {
        let p = &self.prefix;
        let find = |name: String| -> Option<(usize, Option<usize>)> {
            let w = params.position(&format!("{name}.w"))?;
            let b = if self.bias {
                Some(params.position(&format!("{name}.b"))?)
            } else {
                None
            };
            Some((w, b))
        };
        let resize = find(format!("{p}.in"))?;
        let mut layers = Vec::new();
        for (l, &d) in self.dilations.iter().enumerate() {
            let (w, b) = find(format!("{p}.layer{l}"))?;
            layers.push((w, b, d));
        }
        let mut heads = Vec::new();
        for (h, &width) in self.heads.iter().enumerate() {
            let (w, b) = find(format!("{p}.out{h}"))?;
            heads.push((w, b, width));
        }
        Some(TcnLayout {
            input: self.input,
            channels: self.channels,
            taps: self.taps,
            resize,
            layers,
            heads,
        })
    }
}

impl TcnLayout {
    /// Frames of history each output depends on, including the current one.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .layers
            .iter()
            .map(|&(_, _, d)| (self.taps - 1) * d)
            .sum::<usize>()
    }

    pub fn on_tape<F: Real>(
        &self,
        tape: &mut Tape<F>,
        vars: &[Var],
        x: Var,
        padding: Padding,
    ) -> Result<Vec<Var>> {
        let slope = F::of(SLOPE);
        let b = |i: Option<usize>| i.map(|i| vars[i]);
        let (w, bias) = self.resize;
        let r = tape.conv(x, vars[w], b(bias), 1, Padding::Causal)?;
        let mut h = tape.leaky_relu(r, slope);
        for &(w, bias, d) in &self.layers {
            let c = tape.conv(h, vars[w], b(bias), d, padding)?;
            let a = tape.leaky_relu(c, slope);
            h = tape.add(h, a);
        }
        self.heads
            .iter()
            .map(|&(w, bias, _)| tape.conv(h, vars[w], b(bias), 1, Padding::Causal))
            .collect()
    }

    /// Tape-free forward on `[T, C]` or `[B, T, C]` input.
    pub fn forward<F: Real>(
        &self,
        params: &ParamSet<F>,
        x: &Tensor<F>,
        padding: Padding,
    ) -> Result<Vec<Tensor<F>>> {
        let t = params.tensors();
        let slope = F::of(SLOPE);
        let b = |i: Option<usize>| i.map(|i| &t[i]);
        let (w, bias) = self.resize;
        let mut h = conv1d_dilated(x, &t[w], b(bias), 1, Padding::Causal)?
            .map(|v| leaky_relu_scalar(v, slope));
        for &(w, bias, d) in &self.layers {
            let c = conv1d_dilated(&h, &t[w], b(bias), d, padding)?;
            for (hv, cv) in h.data_mut().iter_mut().zip(c.data()) {
                *hv += leaky_relu_scalar(*cv, slope);
            }
        }
        self.heads
            .iter()
            .map(|&(w, bias, _)| conv1d_dilated(&h, &t[w], b(bias), 1, Padding::Causal))
            .collect()
    }
}
