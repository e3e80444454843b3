//! Reverse-mode tape. Nodes are appended in evaluation order, so every
//! node's inputs precede it and a single reverse sweep visits each node once.

use super::kernels::{self, ConvGeom};
use super::{check_conv_shapes, Padding, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        wt: Vec<F>,
    },
    LeakyRelu(Var, F),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Square(Var),
    ExpClamp { x: Var, lo: F, hi: F },
    Softmax { x: Var, groups: usize },
    Slice { x: Var, start: usize, len: usize },
    Concat(Vec<Var>),
    Mse { pred: Var, target: Var },
    Kl { mu: Var, var: Var },
    Mean(Var),
    Combine(Vec<(Var, F)>),
}

impl<F> Op<F> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv { .. } => "conv1d_dilated",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Square(..) => "square",
            Op::ExpClamp { .. } => "exp_clamped",
            Op::Softmax { .. } => "softmax_over_modalities",
            Op::Slice { .. } => "slice_channels",
            Op::Concat(..) => "concat_channels",
            Op::Mse { .. } => "mse",
            Op::Kl { .. } => "kl_standard_normal",
            Op::Mean(..) => "mean",
            Op::Combine(..) => "combine",
        }
    }
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Single-owner record of a forward computation.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    nonfinite: Option<String>,
    kinks: u64,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to the leaves that requested them.
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<Tensor<F>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("gradient shape"))
    }

    /// Gradient data of a leaf; zeros when the output did not depend on it.
    pub fn data_or_zero(&self, v: Var) -> Vec<F> {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => vec![F::zero(); self.shapes[v.0].iter().product()],
        }
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            nonfinite: None,
            kinks: 0xcbf2_9ce4_8422_2325,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Name of the first operation whose output contained a non-finite value.
    pub fn first_nonfinite(&self) -> Option<&str> {
        self.nonfinite.as_deref()
    }

    /// Hash of which side of every non-differentiable point (leaky ReLU
    /// kink, exp clamp bound) each element fell on. Two evaluations with
    /// equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        self.kinks
    }

    fn mix_kinks(&mut self, states: impl Iterator<Item = u8>) {
        let mut h = self.kinks;
        for s in states {
            h = (h ^ s as u64).wrapping_mul(0x0100_0000_01b3);
        }
        self.kinks = h;
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        if self.nonfinite.is_none() && !value.is_finite() {
            self.nonfinite = Some(format!("{} (node {})", op.name(), self.nodes.len()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "{op}: operand shapes differ"
        );
    }

    pub fn conv(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        dilation: usize,
        padding: Padding,
    ) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = b.map(|b| self.value(b));
        let (batch, frames, cin, cout, taps) = check_conv_shapes(xv, wv, bv, dilation)?;
        let geom = ConvGeom {
            batch,
            frames,
            cin,
            cout,
            taps,
            dilation,
            shift: padding.shift(taps, dilation),
        };
        let wt = kernels::transpose_kernel(wv.data(), cout, cin, taps);
        let mut out = vec![F::zero(); batch * frames * cout];
        kernels::conv_forward(&geom, xv.data(), &wt, bv.map(|b| b.data()), &mut out);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = cout;
        let value = Tensor::new(shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        Ok(self.push(value, Op::Conv { x, w, b, geom, wt }, rg))
    }

    /// Per-frame linear layer; `w` is `[C_out, C_in, 1]`.
    pub fn pointwise(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.conv(x, w, Some(b), 1, Padding::Causal)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: F) -> Var {
        let value = self.value(x).map(|v| kernels::leaky_relu_scalar(v, slope));
        let states: Vec<u8> = self.value(x).data().iter().map(|&v| (v >= F::zero()) as u8).collect();
        self.mix_kinks(states.into_iter());
        let rg = self.rg(&[x]);
        self.push(value, Op::LeakyRelu(x, slope), rg)
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data).unwrap()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let value = self.zip(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let value = self.zip(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let value = self.zip(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let value = self.value(a).map(|v| v * s);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        let rg = self.rg(&[a]);
        self.push(value, Op::Square(a), rg)
    }

    /// `exp(clamp(x, lo, hi))`; the gradient is zero where the clamp is active.
    pub fn exp_clamped(&mut self, x: Var, lo: F, hi: F) -> Var {
        let value = self.value(x).map(|v| v.max(lo).min(hi).exp());
        let states: Vec<u8> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| (v > lo) as u8 + (v >= hi) as u8)
            .collect();
        self.mix_kinks(states.into_iter());
        let rg = self.rg(&[x]);
        self.push(value, Op::ExpClamp { x, lo, hi }, rg)
    }

    /// Softmax across `groups` blocks of the channel axis: channel
    /// `m * (C / groups) + d` is modality `m`, latent coefficient `d`.
    pub fn softmax_groups(&mut self, x: Var, groups: usize) -> Var {
        let xv = self.value(x);
        let c = xv.channels();
        assert!(groups >= 1 && c.is_multiple_of(groups), "softmax: bad group count");
        let width = c / groups;
        let mut out = xv.clone();
        let mut buf = vec![F::zero(); groups];
        for row in out.data_mut().chunks_mut(c) {
            for d in 0..width {
                for (m, g) in buf.iter_mut().enumerate() {
                    *g = row[m * width + d];
                }
                kernels::softmax_in_place(&mut buf);
                for (m, g) in buf.iter().enumerate() {
                    row[m * width + d] = *g;
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::Softmax { x, groups }, rg)
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let c = xv.channels();
        assert!(start + len <= c, "slice out of range");
        let data: Vec<F> = xv
            .data()
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let value = Tensor::new(shape, data).unwrap();
        let rg = self.rg(&[x]);
        self.push(value, Op::Slice { x, start, len }, rg)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        let first = self.value(parts[0]);
        let lead: Vec<usize> = first.shape()[..first.shape().len() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).channels()).collect();
        for &p in parts {
            let s = self.value(p).shape();
            assert_eq!(&s[..s.len() - 1], &lead[..], "concat: leading dims differ");
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, data).unwrap();
        let rg = self.rg(parts);
        self.push(value, Op::Concat(parts.to_vec()), rg)
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Var {
        self.same_shape(pred, target, "mse");
        let n = F::of(self.value(pred).len() as f64);
        let total = kernels::compensated_sum(
            self.value(pred)
                .data()
                .iter()
                .zip(self.value(target).data())
                .map(|(&p, &t)| (p - t) * (p - t)),
        );
        let rg = self.rg(&[pred, target]);
        self.push(Tensor::scalar(total / n), Op::Mse { pred, target }, rg)
    }

    /// Mean over all elements of `0.5 (mu² + var − 1 − ln var)`.
    pub fn kl_standard_normal(&mut self, mu: Var, var: Var) -> Var {
        self.same_shape(mu, var, "kl");
        let n = F::of(self.value(mu).len() as f64);
        let half = F::of(0.5);
        let total = kernels::compensated_sum(
            self.value(mu)
                .data()
                .iter()
                .zip(self.value(var).data())
                .map(|(&m, &v)| half * (m * m + v - F::one() - v.ln())),
        );
        let rg = self.rg(&[mu, var]);
        self.push(Tensor::scalar(total / n), Op::Kl { mu, var }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let total = kernels::compensated_sum(xv.data().iter().copied());
        let value = Tensor::scalar(total / F::of(xv.len() as f64));
        let rg = self.rg(&[x]);
        self.push(value, Op::Mean(x), rg)
    }

    /// Weighted sum of scalar nodes.
    pub fn combine(&mut self, terms: &[(Var, F)]) -> Var {
        let mut total = F::zero();
        for &(v, w) in terms {
            assert_eq!(self.value(v).len(), 1, "combine expects scalars");
            total += w * self.value(v).item();
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.rg(&vars);
        self.push(Tensor::scalar(total), Op::Combine(terms.to_vec()), rg)
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients<F>> {
        if self.value(out).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(out).shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<F>>> = (0..n).map(|_| None).collect();
        grads[out.0] = Some(vec![F::one()]);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads: grads
                .into_iter()
                .zip(&self.nodes)
                .map(|(g, n)| if matches!(n.op, Op::Leaf) { g } else { None })
                .collect(),
        })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<F>>], v: Var) -> Option<&'a mut Vec<F>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); len]))
    }

    fn propagate(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom, wt } => {
                let xv = self.value(*x).data();
                let mut dwt = self
                    .nodes[w.0]
                    .requires_grad
                    .then(|| vec![F::zero(); wt.len()]);
                let mut dbias = b
                    .filter(|b| self.nodes[b.0].requires_grad)
                    .map(|_| vec![F::zero(); geom.cout]);
                {
                    let dx = self.slot(grads, *x).map(|v| v.as_mut_slice());
                    kernels::conv_backward(
                        geom,
                        xv,
                        wt,
                        g,
                        dx,
                        dwt.as_deref_mut(),
                        dbias.as_deref_mut(),
                    );
                }
                if let Some(dwt) = dwt {
                    let dw = kernels::untranspose_kernel(&dwt, geom.cout, geom.cin, geom.taps);
                    add_into(self.slot(grads, *w), &dw);
                }
                if let (Some(db), Some(b)) = (dbias, b) {
                    add_into(self.slot(grads, *b), &db);
                }
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x).data();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xv) {
                        *d += if v >= F::zero() { gv } else { *slope * gv };
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(self.slot(grads, *a), g);
                add_into(self.slot(grads, *b), g);
            }
            Op::Sub(a, b) => {
                add_into(self.slot(grads, *a), g);
                if let Some(db) = self.slot(grads, *b) {
                    for (d, &gv) in db.iter_mut().zip(g) {
                        *d -= gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, &gv), &y) in da.iter_mut().zip(g).zip(bv) {
                        *d += gv * y;
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for ((d, &gv), &x) in db.iter_mut().zip(g).zip(av) {
                        *d += gv * x;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(da) = self.slot(grads, *a) {
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d += gv * *s;
                    }
                }
            }
            Op::Square(a) => {
                let av = self.value(*a).data();
                let two = F::of(2.0);
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, &gv), &x) in da.iter_mut().zip(g).zip(av) {
                        *d += two * x * gv;
                    }
                }
            }
            Op::ExpClamp { x, lo, hi } => {
                let xv = self.value(*x).data();
                let yv = node.value.data();
                if let Some(dx) = self.slot(grads, *x) {
                    for (((d, &gv), &v), &y) in dx.iter_mut().zip(g).zip(xv).zip(yv) {
                        if v > *lo && v < *hi {
                            *d += gv * y;
                        }
                    }
                }
            }
            Op::Softmax { x, groups } => {
                let y = node.value.data();
                let c = node.value.channels();
                let width = c / groups;
                if let Some(dx) = self.slot(grads, *x) {
                    for r in 0..y.len() / c {
                        for d in 0..width {
                            let mut dot = F::zero();
                            for m in 0..*groups {
                                let k = r * c + m * width + d;
                                dot += y[k] * g[k];
                            }
                            for m in 0..*groups {
                                let k = r * c + m * width + d;
                                dx[k] += y[k] * (g[k] - dot);
                            }
                        }
                    }
                }
            }
            Op::Slice { x, start, len } => {
                let c = self.value(*x).channels();
                if let Some(dx) = self.slot(grads, *x) {
                    for (r, gr) in g.chunks(*len).enumerate() {
                        for (d, &gv) in dx[r * c + start..r * c + start + len].iter_mut().zip(gr) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).channels()).collect();
                let total: usize = widths.iter().sum();
                let mut off = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    if let Some(dp) = self.slot(grads, p) {
                        for (r, dr) in dp.chunks_mut(w).enumerate() {
                            for (d, &gv) in dr.iter_mut().zip(&g[r * total + off..r * total + off + w]) {
                                *d += gv;
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::Mse { pred, target } => {
                let (pv, tv) = (self.value(*pred).data(), self.value(*target).data());
                let k = F::of(2.0) * g[0] / F::of(pv.len() as f64);
                if let Some(dp) = self.slot(grads, *pred) {
                    for ((d, &p), &t) in dp.iter_mut().zip(pv).zip(tv) {
                        *d += k * (p - t);
                    }
                }
                if let Some(dt) = self.slot(grads, *target) {
                    for ((d, &p), &t) in dt.iter_mut().zip(pv).zip(tv) {
                        *d -= k * (p - t);
                    }
                }
            }
            Op::Kl { mu, var } => {
                let (mv, vv) = (self.value(*mu).data(), self.value(*var).data());
                let k = g[0] / F::of(mv.len() as f64);
                if let Some(dm) = self.slot(grads, *mu) {
                    for (d, &m) in dm.iter_mut().zip(mv) {
                        *d += k * m;
                    }
                }
                let half = F::of(0.5);
                if let Some(dv) = self.slot(grads, *var) {
                    for (d, &v) in dv.iter_mut().zip(vv) {
                        *d += k * half * (F::one() - v.recip());
                    }
                }
            }
            Op::Mean(x) => {
                let n = F::of(self.value(*x).len() as f64);
                if let Some(dx) = self.slot(grads, *x) {
                    let k = g[0] / n;
                    for d in dx.iter_mut() {
                        *d += k;
                    }
                }
            }
            Op::Combine(terms) => {
                for &(v, w) in terms {
                    if let Some(dv) = self.slot(grads, v) {
                        dv[0] += w * g[0];
                    }
                }
            }
        }
    }
}

fn add_into<F: Real>(slot: Option<&mut Vec<F>>, g: &[F]) {
    if let Some(d) = slot {
        for (d, &gv) in d.iter_mut().zip(g) {
            *d += gv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.square(x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn product_rule() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(2.0));
        let y = tape.param(Tensor::scalar(5.0));
        let p = tape.mul(x, y);
        let g = tape.backward(p).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 5.0);
        assert_eq!(g.get(y).unwrap().item(), 2.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros(&[3]));
        let y = tape.scale(x, 2.0);
        assert!(matches!(tape.backward(y), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(1.5));
        let c = tape.constant(Tensor::scalar(4.0));
        let p = tape.mul(x, c);
        let g = tape.backward(p).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().item(), 4.0);
    }

    #[test]
    fn reused_node_accumulates() {
        // f = x*x + x  → 2x + 1
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(1.25));
        let xx = tape.mul(x, x);
        let s = tape.add(xx, x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 3.5);
    }

    #[test]
    fn nonfinite_is_reported_with_op_name() {
        let mut tape = Tape::<f64>::new();
        let mu = tape.constant(Tensor::scalar(0.0));
        let var = tape.constant(Tensor::scalar(-1.0));
        tape.kl_standard_normal(mu, var);
        assert!(tape.first_nonfinite().unwrap().starts_with("kl_standard_normal"));
    }
}
