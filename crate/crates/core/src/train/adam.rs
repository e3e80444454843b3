use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    /// Applied updates; drives bias correction.
    pub step: u64,
    /// Updates refused because a gradient was not finite.
    pub skipped: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &[Tensor<F>]) -> Self {
        let zeros = || params.iter().map(|p| vec![F::zero(); p.len()]).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
            skipped: 0,
        }
    }

    pub fn cast<G: Real>(&self) -> AdamState<G> {
        let c = |b: &Vec<Vec<F>>| {
            b.iter()
                .map(|x| x.iter().map(|v| G::of(v.f64())).collect())
                .collect()
        };
        AdamState {
            m: c(&self.m),
            v: c(&self.v),
            step: self.step,
            skipped: self.skipped,
        }
    }

    pub fn matches(&self, params: &[Tensor<F>]) -> bool {
        self.m.len() == params.len()
            && self.v.len() == params.len()
            && params
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(p, (m, v))| m.len() == p.len() && v.len() == p.len())
    }
}

/// One bias-corrected Adam update.
///
/// Returns `Ok(false)` and leaves everything but `skipped` untouched when any
/// gradient entry is not finite.
pub fn adam_step<F: Real>(
    params: &mut [Tensor<F>],
    grads: &[Vec<F>],
    state: &mut AdamState<F>,
    cfg: &AdamConfig,
) -> Result<bool> {
    if grads.len() != params.len()
        || grads.iter().zip(params.iter()).any(|(g, p)| g.len() != p.len())
        || !state.matches(params)
    {
        return Err(Error::invalid("gradient or optimizer shapes do not match the parameters"));
    }
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        state.skipped += 1;
        return Ok(false);
    }
    state.step += 1;
    let (b1, b2) = (F::of(cfg.beta1), F::of(cfg.beta2));
    let one = F::one();
    let c1 = one - b1.powi(state.step.min(i32::MAX as u64) as i32);
    let c2 = one - b2.powi(state.step.min(i32::MAX as u64) as i32);
    let (lr, eps) = (F::of(cfg.lr), F::of(cfg.eps));
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, x) in p.data_mut().iter_mut().enumerate() {
            let g = grads[i][j];
            m[j] = b1 * m[j] + (one - b1) * g;
            v[j] = b2 * v[j] + (one - b2) * g * g;
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            *x -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::new(vec![1], vec![v]).unwrap()]
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = p.clone();
        let mut s = AdamState::new(&p);
        for _ in 0..10 {
            assert!(adam_step(&mut p, &[vec![0.0; 3]], &mut s, &AdamConfig::with_lr(0.1)).unwrap());
        }
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_first_moment_is_unbiased() {
        let mut p = scalar(0.0);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig::with_lr(1e-3);
        for _ in 0..5 {
            adam_step(&mut p, &[vec![0.7]], &mut s, &cfg).unwrap();
            let c1 = 1.0 - cfg.beta1.powi(s.step as i32);
            assert!((s.m[0][0] / c1 - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = scalar(1.0);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig::with_lr(0.1);
        let mut reached = None;
        for step in 1..=500 {
            let x = p[0].data()[0];
            adam_step(&mut p, &[vec![2.0 * x]], &mut s, &cfg).unwrap();
            if p[0].data()[0].abs() < 1e-3 && reached.is_none() {
                reached = Some(step);
            }
        }
        assert!(reached.is_some(), "final x = {}", p[0].data()[0]);
        assert!(p[0].data()[0].abs() < 1e-3);
    }

    #[test]
    fn non_finite_gradient_skips() {
        let mut p = scalar(1.0);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig::with_lr(0.1);
        assert!(!adam_step(&mut p, &[vec![f64::NAN]], &mut s, &cfg).unwrap());
        assert_eq!((s.step, s.skipped), (0, 1));
        assert_eq!(p, scalar(1.0));
    }
}
