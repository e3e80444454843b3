use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    /// `(analytic, numeric)` at the worst coordinate.
    pub worst_values: (f64, f64),
    pub checked: usize,
    /// Coordinates skipped because every stencil straddled a kink.
    pub at_kink: usize,
}

const KINK_RETRIES: usize = 4;

/// Compares reverse-mode gradients against fourth-order central differences.
///
/// A stencil whose endpoints fall on a different smooth piece than the base
/// point (see [`Tape::kink_signature`]) is retried with a tenfold smaller
/// step, up to four times, then reported in `at_kink` instead of compared.
///
/// `f` records a scalar function of the parameter leaves onto the tape.
/// When `samples` is at least the number of coordinates every coordinate is
/// checked; otherwise a seeded random subset is. The error of one coordinate
/// is `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<G>(
    params: &[Tensor<f64>],
    f: G,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    G: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    type Eval = (f64, u64, Option<Vec<Vec<f64>>>);
    let eval = |ps: &[Tensor<f64>], grad: bool| -> Result<Eval> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        if let Some(op) = tape.first_nonfinite() {
            return Err(Error::Numerical {
                op: op.to_string(),
                detail: "non-finite intermediate during gradient check".into(),
            });
        }
        let value = tape.value(out).item();
        let grads = if grad {
            let g = tape.backward(out)?;
            Some(vars.iter().map(|&v| g.data_or_zero(v)).collect())
        } else {
            None
        };
        Ok((value, tape.kink_signature(), grads))
    };

    let (_, base_sig, analytic) = eval(params, true)?;
    let analytic = analytic.expect("gradients requested");

    let sizes: Vec<usize> = params.iter().map(Tensor::len).collect();
    let total: usize = sizes.iter().sum();
    let coords: Vec<(usize, usize)> = if samples >= total {
        sizes
            .iter()
            .enumerate()
            .flat_map(|(p, &n)| (0..n).map(move |i| (p, i)))
            .collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..samples)
            .map(|_| {
                let mut k = rng.random_range(0..total);
                let mut p = 0;
                while k >= sizes[p] {
                    k -= sizes[p];
                    p += 1;
                }
                (p, k)
            })
            .collect()
    };

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        checked: 0,
        at_kink: 0,
    };
    for &(p, i) in &coords {
        let orig = work[p].data()[i];
        let mut step = epsilon;
        let mut numeric = None;
        for _ in 0..KINK_RETRIES {
            let mut at = |offset: f64| -> Result<Option<f64>> {
                work[p].data_mut()[i] = orig + offset;
                let (v, sig, _) = eval(&work, false)?;
                work[p].data_mut()[i] = orig;
                Ok((sig == base_sig).then_some(v))
            };
            let points = [at(step)?, at(-step)?, at(2.0 * step)?, at(-2.0 * step)?];
            if let [Some(u1), Some(d1), Some(u2), Some(d2)] = points {
                numeric = Some((8.0 * (u1 - d1) - (u2 - d2)) / (12.0 * step));
                break;
            }
            step /= 10.0;
        }
        let Some(numeric) = numeric else {
            report.at_kink += 1;
            continue;
        };
        let a = analytic[p][i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = rel;
            report.worst = Some((p, i));
            report.worst_values = (a, numeric);
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Padding;
    use rand::Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
    }

    #[test]
    fn linear_map_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = rand_tensor(&[3, 4, 1], &mut rng, 1.0);
        let b = rand_tensor(&[3], &mut rng, 1.0);
        let x = rand_tensor(&[6, 4], &mut rng, 1.0);
        let target = rand_tensor(&[6, 3], &mut rng, 1.0);
        let r = grad_check(
            &[w, b],
            |t, v| {
                let xv = t.constant(x.clone());
                let y = t.pointwise(xv, v[0], v[1])?;
                let c = t.constant(Tensor::from_fn(&[6, 3], |i| target.data()[i].sin()));
                let p = t.mul(y, c);
                Ok(t.mean(p))
            },
            1e-5,
            usize::MAX,
            0,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn leaky_relu_away_from_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = rand_tensor(&[20], &mut rng, 2.0);
        for v in x.data_mut() {
            if v.abs() < 0.1 {
                *v += 0.5;
            }
        }
        let r = grad_check(
            &[x],
            |t, v| {
                let y = t.leaky_relu(v[0], 0.2);
                let s = t.square(y);
                Ok(t.mean(s))
            },
            1e-6,
            usize::MAX,
            0,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-7, "{r:?}");
    }

    #[test]
    fn two_layer_dilated_stack() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_tensor(&[2, 12, 3], &mut rng, 1.0);
        let params = vec![
            rand_tensor(&[4, 3, 5], &mut rng, 0.5),
            rand_tensor(&[4], &mut rng, 0.5),
            rand_tensor(&[2, 4, 5], &mut rng, 0.5),
            rand_tensor(&[2], &mut rng, 0.5),
        ];
        let target = rand_tensor(&[2, 12, 2], &mut rng, 1.0);
        let r = grad_check(
            &params,
            |t, v| {
                let xv = t.constant(x.clone());
                let h = t.conv(xv, v[0], Some(v[1]), 1, Padding::Causal)?;
                let h = t.leaky_relu(h, 0.2);
                let y = t.conv(h, v[2], Some(v[3]), 2, Padding::Causal)?;
                let tv = t.constant(target.clone());
                Ok(t.mse(y, tv))
            },
            1e-6,
            usize::MAX,
            0,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    #[test]
    fn rejects_bad_epsilon_and_reports_nonfinite() {
        let x = Tensor::scalar(1.0);
        assert!(grad_check(std::slice::from_ref(&x), |t, v| Ok(t.square(v[0])), 0.0, 1, 0).is_err());
        let err = grad_check(
            &[x],
            |t, v| {
                let z = t.constant(Tensor::scalar(0.0));
                Ok(t.kl_standard_normal(v[0], z))
            },
            1e-6,
            1,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numerical { ref op, .. } if op.contains("kl")));
    }
}
