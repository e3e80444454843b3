//! Minimal deterministic differentiable compute kernel.
//!
//! Sequences are stored frame-major: a tensor of shape `[B, T, C]` (or
//! `[T, C]` for a single sequence) keeps the `C` channel values of one frame
//! contiguous. Convolution kernels use `[C_out, C_in, K]`.
//!
//! Only the operations the model needs exist. Forward arithmetic is
//! evaluated in a fixed per-element order, so results do not depend on the
//! sequence length or on how frames are batched; the streaming engine
//! relies on this to match offline inference bit for bit.

mod gradcheck;
pub(crate) mod kernels;
mod tape;

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::real::Real;

pub use gradcheck::{grad_check, GradCheckReport};
pub use kernels::{leaky_relu_scalar, softmax_in_place};
pub use tape::{Gradients, Tape, Var};

/// Zero-padding rule for [`conv1d_dilated`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output frame `t` reads only frames `<= t`; missing history is zero.
    Causal,
    /// Causal, shifted forward by a fixed number of frames of lookahead.
    Lookahead(usize),
    /// Symmetric taps around `t`.
    Centered,
}

impl Padding {
    pub(crate) fn shift(self, taps: usize, dilation: usize) -> isize {
        match self {
            Padding::Causal => 0,
            Padding::Lookahead(n) => n as isize,
            Padding::Centered => ((taps - 1) / 2 * dilation) as isize,
        }
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: std::fmt::Debug> std::fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![F::zero(); n],
        }
    }

    pub fn full(shape: &[usize], v: F) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: F) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> F) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Builds a `[T, C]` tensor from per-frame rows.
    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::invalid("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Tensor::new(vec![rows.len(), width], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a rank-0 (or single-element) tensor.
    pub fn item(&self) -> F {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Last-axis width.
    pub fn channels(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Interprets the tensor as `[B, T, C]`, treating rank 2 as `B = 1`.
    pub fn seq_dims(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [t, c] => Ok((1, t, c)),
            [b, t, c] => Ok((b, t, c)),
            _ => Err(Error::invalid(format!(
                "expected a [T, C] or [B, T, C] sequence, got {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::invalid(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Row `t` of a `[T, C]` tensor.
    pub fn row(&self, t: usize) -> &[F] {
        let c = self.channels();
        &self.data[t * c..(t + 1) * c]
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::of(v.f64())).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<F>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.f64() - b.f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Writes the tensor as a whitespace-separated text matrix: one line per
    /// leading index, trailing axis along the line. Intended for diffing
    /// against external oracles.
    pub fn dump_text(&self, path: &Path) -> Result<()> {
        let c = self.channels().max(1);
        let mut s = String::new();
        let _ = writeln!(s, "# shape {:?}", self.shape);
        for row in self.data.chunks(c) {
            let line: Vec<String> = row.iter().map(|v| format!("{:.17e}", v.f64())).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        std::fs::write(path, s)?;
        Ok(())
    }
}

fn check_conv_shapes<F: Real>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    dilation: usize,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (b, t, cin) = input.seq_dims()?;
    let [cout, kcin, taps] = kernel.shape[..] else {
        return Err(Error::invalid(format!(
            "kernel must be [C_out, C_in, K], got {:?}",
            kernel.shape
        )));
    };
    if kcin != cin {
        return Err(Error::invalid(format!(
            "kernel expects {kcin} input channels, input has {cin}"
        )));
    }
    if taps == 0 || dilation == 0 || t == 0 {
        return Err(Error::invalid("kernel length, dilation and T must be >= 1"));
    }
    if let Some(bias) = bias {
        if bias.len() != cout {
            return Err(Error::invalid(format!(
                "bias has {} entries, expected {cout}",
                bias.len()
            )));
        }
    }
    Ok((b, t, cin, cout, taps))
}

/// Dilated 1-D convolution over time. Output keeps the input length.
pub fn conv1d_dilated<F: Real>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    dilation: usize,
    padding: Padding,
) -> Result<Tensor<F>> {
    let (b, t, cin, cout, taps) = check_conv_shapes(input, kernel, bias, dilation)?;
    let geom = kernels::ConvGeom {
        batch: b,
        frames: t,
        cin,
        cout,
        taps,
        dilation,
        shift: padding.shift(taps, dilation),
    };
    let wt = kernels::transpose_kernel(kernel.data(), cout, cin, taps);
    let mut out = vec![F::zero(); b * t * cout];
    kernels::conv_forward(&geom, input.data(), &wt, bias.map(|b| b.data()), &mut out);
    let mut shape = input.shape.clone();
    *shape.last_mut().unwrap() = cout;
    Tensor::new(shape, out)
}

/// Per-frame linear map (`1×1` convolution). `weights` is `[C_out, C_in]`.
pub fn pointwise_conv<F: Real>(
    input: &Tensor<F>,
    weights: &Tensor<F>,
    bias: &Tensor<F>,
) -> Result<Tensor<F>> {
    let [cout, cin] = weights.shape[..] else {
        return Err(Error::invalid(format!(
            "pointwise weights must be [C_out, C_in], got {:?}",
            weights.shape
        )));
    };
    let kernel = Tensor::new(vec![cout, cin, 1], weights.data.clone())?;
    conv1d_dilated(input, &kernel, Some(bias), 1, Padding::Causal)
}

pub fn leaky_relu<F: Real>(x: &Tensor<F>, slope: F) -> Tensor<F> {
    x.map(|v| leaky_relu_scalar(v, slope))
}

/// Softmax across the modality axis of a `[M, T, L]` logit tensor.
pub fn softmax_over_modalities<F: Real>(logits: &Tensor<F>) -> Result<Tensor<F>> {
    let [m, t, l] = logits.shape[..] else {
        return Err(Error::invalid(format!(
            "logits must be [M, T, L], got {:?}",
            logits.shape
        )));
    };
    if m == 0 {
        return Err(Error::invalid("need at least one modality"));
    }
    let mut out = logits.clone();
    let mut group = vec![F::zero(); m];
    for i in 0..t * l {
        for (j, g) in group.iter_mut().enumerate() {
            *g = logits.data[j * t * l + i];
        }
        softmax_in_place(&mut group);
        for (j, g) in group.iter().enumerate() {
            out.data[j * t * l + i] = *g;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct nested-loop convolution written against `[C_in, T]` layout.
    fn conv_oracle(
        x_ct: &[Vec<f64>],
        w: &[Vec<Vec<f64>>],
        dilation: usize,
    ) -> Vec<Vec<f64>> {
        let t_len = x_ct[0].len();
        let taps = w[0][0].len();
        let mut out = vec![vec![0.0; t_len]; w.len()];
        for (co, out_row) in out.iter_mut().enumerate() {
            for (t, o) in out_row.iter_mut().enumerate() {
                for (ci, x_row) in x_ct.iter().enumerate() {
                    for k in 0..taps {
                        let back = (taps - 1 - k) * dilation;
                        if t >= back {
                            *o += w[co][ci][k] * x_row[t - back];
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_tap_passes_input_through() {
        let x = Tensor::new(vec![6, 1], vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 3], vec![0.0, 0.0, 1.0]).unwrap();
        let y = conv1d_dilated(&x, &k, None, 1, Padding::Causal).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn dilated_conv_matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[8, 2], &mut rng);
        let k = random(&[3, 2, 5], &mut rng);
        let y = conv1d_dilated(&x, &k, None, 2, Padding::Causal).unwrap();
        let x_ct: Vec<Vec<f64>> = (0..2).map(|c| (0..8).map(|t| x.row(t)[c]).collect()).collect();
        let w: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|co| {
                (0..2)
                    .map(|ci| (0..5).map(|k2| k.data()[co * 10 + ci * 5 + k2]).collect())
                    .collect()
            })
            .collect();
        let expect = conv_oracle(&x_ct, &w, 2);
        for t in 0..8 {
            for co in 0..3 {
                assert!((y.row(t)[co] - expect[co][t]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = random(&[4, 3, 5], &mut rng);
        let y = conv1d_dilated(&Tensor::<f64>::zeros(&[10, 3]), &k, None, 4, Padding::Causal)
            .unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::<f64>::zeros(&[4, 3]);
        let k = Tensor::<f64>::zeros(&[2, 2, 3]);
        assert!(matches!(
            conv1d_dilated(&x, &k, None, 1, Padding::Causal),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn centered_padding_reads_future_frames() {
        // Single tap at the last position reads frame t + 2 when centered, K = 5.
        let x = Tensor::new(vec![5, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 5], vec![0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let y = conv1d_dilated(&x, &k, None, 1, Padding::Centered).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0, 5.0, 0.0, 0.0]);
        let y = conv1d_dilated(&x, &k, None, 1, Padding::Lookahead(1)).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0, 4.0, 5.0, 0.0]);
    }

    #[test]
    fn pointwise_identity_and_sum() {
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]).unwrap();
        let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let y = pointwise_conv(&x, &eye, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y.data(), x.data());

        let ones = Tensor::full(&[2, 3], 1.0);
        let col = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = pointwise_conv(&col, &ones, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y.data(), &[6.0, 6.0]);
    }

    #[test]
    fn pointwise_matches_matmul_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[7, 5], &mut rng);
        let w = random(&[4, 5], &mut rng);
        let b = random(&[4], &mut rng);
        let y = pointwise_conv(&x, &w, &b).unwrap();
        for t in 0..7 {
            for c in 0..4 {
                let dot: f64 = (0..5).map(|i| w.data()[c * 5 + i] * x.row(t)[i]).sum();
                assert!((y.row(t)[c] - (dot + b.data()[c])).abs() < 1e-12);
            }
        }
        assert!(pointwise_conv(&x, &random(&[4, 3], &mut rng), &b).is_err());
    }

    #[test]
    fn leaky_relu_values() {
        assert_eq!(leaky_relu_scalar(1.0, 0.2), 1.0);
        assert!((leaky_relu_scalar(-1.0f64, 0.2) + 0.2).abs() < 1e-15);
        assert_eq!(leaky_relu_scalar(0.0, 0.2), 0.0);
    }

    #[test]
    fn softmax_examples() {
        let eq = Tensor::<f64>::new(vec![2, 1, 2], vec![0.3, -1.0, 0.3, -1.0]).unwrap();
        let w = softmax_over_modalities(&eq).unwrap();
        assert!(w.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));

        let l = Tensor::new(vec![2, 1, 1], vec![3f64.ln(), 0.0]).unwrap();
        let w = softmax_over_modalities(&l).unwrap();
        assert!((w.data()[0] - 0.75).abs() < 1e-15 && (w.data()[1] - 0.25).abs() < 1e-15);

        let sat = Tensor::new(vec![2, 1, 1], vec![1000.0, 0.0]).unwrap();
        let w = softmax_over_modalities(&sat).unwrap();
        assert_eq!(w.data()[0], 1.0);
        assert!(w.data()[1] >= 0.0 && w.data()[1] < 1e-300);
    }

    proptest! {
        #[test]
        fn causal_conv_ignores_future(seed in 0u64..1000, t_pert in 0usize..20, dil in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[20, 3], &mut rng);
            let k = random(&[2, 3, 5], &mut rng);
            let mut x2 = x.clone();
            x2.data_mut()[t_pert * 3 + 1] += 1.5;
            let y1 = conv1d_dilated(&x, &k, None, dil, Padding::Causal).unwrap();
            let y2 = conv1d_dilated(&x2, &k, None, dil, Padding::Causal).unwrap();
            for t in 0..t_pert {
                prop_assert_eq!(y1.row(t), y2.row(t));
            }
        }

        #[test]
        fn conv_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[16, 2], &mut rng);
            let y = random(&[16, 2], &mut rng);
            let k = random(&[3, 2, 5], &mut rng);
            let combo = Tensor::from_fn(&[16, 2], |i| a * x.data()[i] + b * y.data()[i]);
            let lhs = conv1d_dilated(&combo, &k, None, 2, Padding::Causal).unwrap();
            let cx = conv1d_dilated(&x, &k, None, 2, Padding::Causal).unwrap();
            let cy = conv1d_dilated(&y, &k, None, 2, Padding::Causal).unwrap();
            for i in 0..lhs.len() {
                prop_assert!((lhs.data()[i] - (a * cx.data()[i] + b * cy.data()[i])).abs() < 1e-10);
            }
        }

        #[test]
        fn conv_is_deterministic_and_batch_independent(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[2, 11, 3], &mut rng);
            let k = random(&[4, 3, 5], &mut rng);
            let y = conv1d_dilated(&x, &k, None, 3, Padding::Causal).unwrap();
            let again = conv1d_dilated(&x, &k, None, 3, Padding::Causal).unwrap();
            prop_assert_eq!(y.data(), again.data());
            let second = Tensor::new(vec![11, 3], x.data()[33..].to_vec()).unwrap();
            let alone = conv1d_dilated(&second, &k, None, 3, Padding::Causal).unwrap();
            prop_assert_eq!(&y.data()[44..], alone.data());
        }
    }
}
