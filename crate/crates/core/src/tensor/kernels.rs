//! Slice-level numeric kernels shared by the tape and the streaming engine.
//!
//! Every output element of the convolution is accumulated as
//! `bias + Σ_k Σ_ci w[co, ci, k] · x[src(t, k), ci]` with `k` outer and `ci`
//! inner, skipping out-of-range taps. Column batching below never changes
//! that order.

use crate::real::Real;

#[inline(always)]
pub fn leaky_relu_scalar<F: Real>(v: F, slope: F) -> F {
    if v >= F::zero() {
        v
    } else {
        slope * v
    }
}

/// Max-subtracted softmax over a small group of logits.
#[inline]
pub fn softmax_in_place<F: Real>(group: &mut [F]) {
    let max = group.iter().copied().fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for g in group.iter_mut() {
        *g = (*g - max).exp();
        total += *g;
    }
    for g in group.iter_mut() {
        *g /= total;
    }
}

/// Neumaier-compensated sum, used by the scalar loss reductions.
pub fn compensated_sum<F: Real>(values: impl IntoIterator<Item = F>) -> F {
    let mut sum = F::zero();
    let mut carry = F::zero();
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub frames: usize,
    pub cin: usize,
    pub cout: usize,
    pub taps: usize,
    pub dilation: usize,
    pub shift: isize,
}

impl ConvGeom {
    /// Source frame read by tap `k` when producing frame `t`.
    #[inline(always)]
    pub fn src(&self, t: usize, k: usize) -> Option<usize> {
        let back = ((self.taps - 1 - k) * self.dilation) as isize;
        let s = t as isize - back + self.shift;
        (s >= 0 && (s as usize) < self.frames).then_some(s as usize)
    }
}

/// `[C_out, C_in, K]` → `[K, C_in, C_out]`.
pub(crate) fn transpose_kernel<F: Real>(w: &[F], cout: usize, cin: usize, taps: usize) -> Vec<F> {
    let mut wt = vec![F::zero(); w.len()];
    for co in 0..cout {
        for ci in 0..cin {
            for k in 0..taps {
                wt[(k * cin + ci) * cout + co] = w[(co * cin + ci) * taps + k];
            }
        }
    }
    wt
}

/// `[K, C_in, C_out]` → `[C_out, C_in, K]`.
pub(crate) fn untranspose_kernel<F: Real>(
    wt: &[F],
    cout: usize,
    cin: usize,
    taps: usize,
) -> Vec<F> {
    let mut w = vec![F::zero(); wt.len()];
    for co in 0..cout {
        for ci in 0..cin {
            for k in 0..taps {
                w[(co * cin + ci) * taps + k] = wt[(k * cin + ci) * cout + co];
            }
        }
    }
    w
}

#[inline(always)]
fn axpy<F: Real>(acc: &mut [F], w: &[F], v: F) {
    for (a, &wv) in acc.iter_mut().zip(w) {
        *a += wv * v;
    }
}

#[inline(always)]
fn init_acc<F: Real>(acc: &mut [F], bias: Option<&[F]>) {
    match bias {
        Some(b) => acc.copy_from_slice(b),
        None => acc.fill(F::zero()),
    }
}

/// One output frame from explicit per-tap input frames (`None` = padding).
/// Used by the streaming engine; arithmetic matches [`conv_forward`].
#[inline]
pub(crate) fn conv_column<'a, F: Real>(
    cin: usize,
    cout: usize,
    taps: usize,
    wt: &[F],
    bias: Option<&[F]>,
    src: impl Fn(usize) -> Option<&'a [F]>,
    acc: &mut [F],
) {
    init_acc(acc, bias);
    for k in 0..taps {
        if let Some(x) = src(k) {
            for (ci, &v) in x[..cin].iter().enumerate() {
                axpy(acc, &wt[(k * cin + ci) * cout..][..cout], v);
            }
        }
    }
}

const BLOCK: usize = 4;

pub(crate) fn conv_forward<F: Real>(
    g: &ConvGeom,
    x: &[F],
    wt: &[F],
    bias: Option<&[F]>,
    out: &mut [F],
) {
    let (cin, cout) = (g.cin, g.cout);
    for b in 0..g.batch {
        let xb = &x[b * g.frames * cin..(b + 1) * g.frames * cin];
        let ob = &mut out[b * g.frames * cout..(b + 1) * g.frames * cout];
        for (blk, oblk) in ob.chunks_mut(BLOCK * cout).enumerate() {
            let t0 = blk * BLOCK;
            let ncols = oblk.len() / cout;
            for acc in oblk.chunks_mut(cout) {
                init_acc(acc, bias);
            }
            for k in 0..g.taps {
                let mut srcs = [None; BLOCK];
                for (j, s) in srcs.iter_mut().enumerate().take(ncols) {
                    *s = g.src(t0 + j, k);
                }
                if srcs.iter().all(Option::is_none) {
                    continue;
                }
                for ci in 0..cin {
                    let w = &wt[(k * cin + ci) * cout..][..cout];
                    for (j, acc) in oblk.chunks_mut(cout).enumerate() {
                        if let Some(s) = srcs[j] {
                            axpy(acc, w, xb[s * cin + ci]);
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates input, kernel (transposed layout) and bias gradients.
pub(crate) fn conv_backward<F: Real>(
    g: &ConvGeom,
    x: &[F],
    wt: &[F],
    dout: &[F],
    dx: Option<&mut [F]>,
    dwt: Option<&mut [F]>,
    dbias: Option<&mut [F]>,
) {
    let (cin, cout) = (g.cin, g.cout);
    if let Some(db) = dbias {
        for row in dout.chunks(cout) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
    }
    // `[K, C_out, C_in]`, so the input gradient is a row update per tap.
    let wk = dx.is_some().then(|| {
        let mut wk = vec![F::zero(); wt.len()];
        for k in 0..g.taps {
            for ci in 0..cin {
                for co in 0..cout {
                    wk[(k * cout + co) * cin + ci] = wt[(k * cin + ci) * cout + co];
                }
            }
        }
        wk
    });
    let mut dx = dx;
    let mut dwt = dwt;
    for b in 0..g.batch {
        for t in 0..g.frames {
            let go = &dout[(b * g.frames + t) * cout..][..cout];
            for k in 0..g.taps {
                let Some(s) = g.src(t, k) else { continue };
                let xrow = (b * g.frames + s) * cin;
                if let (Some(dx), Some(wk)) = (dx.as_deref_mut(), wk.as_deref()) {
                    let row = &mut dx[xrow..xrow + cin];
                    for (co, &gv) in go.iter().enumerate() {
                        axpy(row, &wk[(k * cout + co) * cin..][..cin], gv);
                    }
                }
                if let Some(dwt) = dwt.as_deref_mut() {
                    let dk = &mut dwt[k * cin * cout..(k + 1) * cin * cout];
                    for (ci, d) in dk.chunks_exact_mut(cout).enumerate() {
                        axpy(d, go, x[xrow + ci]);
                    }
                }
            }
        }
    }
}
