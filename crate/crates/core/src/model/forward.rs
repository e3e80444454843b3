use super::{Modality, Model, ModelVariant, Target, TcnLayout};
use crate::error::{Error, Result};
use crate::features::{AUDIO_DIM, FACE_DIM, GAZE_DIM};
use crate::real::Real;
use crate::tensor::{softmax_in_place, Tape, Tensor, Var};

pub(crate) const LOG_SIGMA_MIN: f64 = -9.210_340_371_976_184; // ln 1e-4
pub(crate) const LOG_SIGMA_MAX: f64 = std::f64::consts::LN_10;

#[inline]
pub(crate) fn sigma_from_raw<F: Real>(raw: F) -> F {
    raw.max(F::of(LOG_SIGMA_MIN)).min(F::of(LOG_SIGMA_MAX)).exp()
}

/// `out[d] = Σ_m π_m[d] · x_m[d]`, accumulated in modality order.
#[inline]
pub(crate) fn fuse_means<F: Real>(pi: &[&[F]], x: &[&[F]], out: &mut [F]) {
    out.fill(F::zero());
    for (p, v) in pi.iter().zip(x) {
        for ((o, &pw), &xv) in out.iter_mut().zip(p.iter()).zip(v.iter()) {
            *o += pw * xv;
        }
    }
}

/// Per-frame diagonal Gaussian, `[T, L]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian<F> {
    pub mu: Tensor<F>,
    pub sigma: Tensor<F>,
}

/// Convex weights over modalities, `[M, T, L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights<F> {
    pub pi: Tensor<F>,
}

impl<F: Real> MixtureWeights<F> {
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.pi.shape();
        (s[0], s[1], s[2])
    }

    /// Weights of modality `m` as a `[T, L]` slice.
    pub fn modality(&self, m: usize) -> &[F] {
        let (_, t, l) = self.dims();
        &self.pi.data()[m * t * l..(m + 1) * t * l]
    }

    pub fn uniform(m: usize, t: usize, l: usize) -> Self {
        MixtureWeights {
            pi: Tensor::full(&[m, t, l], F::one() / F::of(m as f64)),
        }
    }

    pub fn one_hot(m: usize, which: usize, t: usize, l: usize) -> Self {
        MixtureWeights {
            pi: Tensor::from_fn(&[m, t, l], |i| {
                if i / (t * l) == which {
                    F::one()
                } else {
                    F::zero()
                }
            }),
        }
    }

    /// Non-negativity and unit sum over modalities within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let (m, t, l) = self.dims();
        for i in 0..t * l {
            let mut total = 0.0;
            for j in 0..m {
                let p = self.pi.data()[j * t * l + i].f64();
                if !(p >= 0.0) {
                    return Err(Error::InternalConsistency(format!(
                        "mixture weight {p} at modality {j}"
                    )));
                }
                total += p;
            }
            if (total - 1.0).abs() > tol {
                return Err(Error::InternalConsistency(format!(
                    "mixture weights sum to {total} at (t, d) = ({}, {})",
                    i / l,
                    i % l
                )));
            }
        }
        Ok(())
    }

    /// Mean Shannon entropy of the weights in bits, per (frame, coefficient).
    pub fn mean_entropy_bits(&self) -> f64 {
        let (m, t, l) = self.dims();
        let mut total = 0.0;
        for i in 0..t * l {
            for j in 0..m {
                let p = self.pi.data()[j * t * l + i].f64();
                if p > 0.0 {
                    total -= p * p.log2();
                }
            }
        }
        total / (t * l) as f64
    }
}

/// Fused latent sample and its analytic parameters, `[T, L]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedLatent<F> {
    pub z: Tensor<F>,
    pub mu: Tensor<F>,
    pub sigma: Tensor<F>,
}

/// Reparameterised draw `μ + σ ⊙ ε`.
pub fn sample_latent<F: Real>(g: &LatentGaussian<F>, noise: &Tensor<F>) -> Result<Tensor<F>> {
    if noise.shape() != g.mu.shape() {
        return Err(Error::invalid(format!(
            "noise shape {:?} does not match latent {:?}",
            noise.shape(),
            g.mu.shape()
        )));
    }
    let data = g
        .mu
        .data()
        .iter()
        .zip(g.sigma.data())
        .zip(noise.data())
        .map(|((&m, &s), &e)| m + s * e)
        .collect();
    Tensor::new(g.mu.shape().to_vec(), data)
}

/// Weighted sum of per-modality samples with the matching Gaussian law.
pub fn fuse<F: Real>(
    samples: &[Tensor<F>],
    gaussians: &[LatentGaussian<F>],
    weights: &MixtureWeights<F>,
) -> Result<FusedLatent<F>> {
    let (m, t, l) = weights.dims();
    if samples.len() != m || gaussians.len() != m {
        return Err(Error::invalid(format!(
            "{} samples and {} gaussians for {m} modalities",
            samples.len(),
            gaussians.len()
        )));
    }
    for x in samples.iter().chain(gaussians.iter().map(|g| &g.mu)) {
        if x.shape() != [t, l] {
            return Err(Error::invalid(format!(
                "latent shape {:?}, weights expect [{t}, {l}]",
                x.shape()
            )));
        }
    }
    weights.validate(1e-6)?;
    let pis: Vec<&[F]> = (0..m).map(|j| weights.modality(j)).collect();
    let mut z = vec![F::zero(); t * l];
    let mut mu = vec![F::zero(); t * l];
    fuse_means(&pis, &samples.iter().map(|s| s.data()).collect::<Vec<_>>(), &mut z);
    fuse_means(
        &pis,
        &gaussians.iter().map(|g| g.mu.data()).collect::<Vec<_>>(),
        &mut mu,
    );
    let mut var = vec![F::zero(); t * l];
    for (p, g) in pis.iter().zip(gaussians) {
        for ((v, &pw), &s) in var.iter_mut().zip(p.iter()).zip(g.sigma.data()) {
            *v += pw * pw * s * s;
        }
    }
    Ok(FusedLatent {
        z: Tensor::new(vec![t, l], z)?,
        mu: Tensor::new(vec![t, l], mu)?,
        sigma: Tensor::new(vec![t, l], var.into_iter().map(F::sqrt).collect())?,
    })
}

/// Mean over coordinates of `KL(N(μ, σ²) ‖ N(0, 1))`.
pub fn kl_standard_normal(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() || mu.is_empty() {
        return Err(Error::invalid("mu and sigma must be non-empty and equally long"));
    }
    let mut total = 0.0;
    for (&m, &s) in mu.iter().zip(sigma) {
        if !(s > 0.0) {
            return Err(Error::invalid(format!("sigma must be positive, got {s}")));
        }
        let v = s * s;
        total += 0.5 * (m * m + v - 1.0 - v.ln());
    }
    Ok(total / mu.len() as f64)
}

/// Training minibatch, `[B, T, *]` per stream, inputs already normalised.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<F> {
    pub audio: Tensor<F>,
    pub gaze: Tensor<F>,
    pub face: Tensor<F>,
}

impl<F: Real> Batch<F> {
    pub fn input(&self, m: Modality) -> &Tensor<F> {
        match m {
            Modality::Audio => &self.audio,
            Modality::Gaze => &self.gaze,
        }
    }

    fn check(&self) -> Result<(usize, usize)> {
        let s = self.face.shape();
        if s.len() != 3 || s[2] != FACE_DIM {
            return Err(Error::invalid(format!("face batch has shape {s:?}")));
        }
        let (b, t) = (s[0], s[1]);
        if self.audio.shape() != [b, t, AUDIO_DIM] || self.gaze.shape() != [b, t, GAZE_DIM] {
            return Err(Error::invalid(format!(
                "batch streams disagree: audio {:?}, gaze {:?}, face {s:?}",
                self.audio.shape(),
                self.gaze.shape()
            )));
        }
        Ok((b, t))
    }
}

/// Loss terms, each a mean over frames and coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub face_rec: f64,
    pub audio_rec: f64,
    pub gaze_rec: f64,
    pub kl_shared: f64,
    pub kl_modality: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Sum of the terms the variant optimises.
    pub fn active_sum(&self, variant: ModelVariant, kl_weight: f64) -> f64 {
        let mut s = self.face_rec;
        if variant.reconstructs_inputs() {
            s += self.audio_rec + self.gaze_rec;
        }
        if variant.kl_shared() {
            s += kl_weight * self.kl_shared;
        }
        if variant.kl_modality() {
            s += kl_weight * self.kl_modality;
        }
        s
    }

    pub fn is_finite(&self) -> bool {
        [
            self.face_rec,
            self.audio_rec,
            self.gaze_rec,
            self.kl_shared,
            self.kl_modality,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Tape nodes of one loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub face: Var,
    pub audio: Option<Var>,
    pub gaze: Option<Var>,
    pub kl_shared: Option<Var>,
    pub kl_modality: Option<Var>,
    pub total: Var,
    /// Mixture weights `[B, T, M·L]`, channel `m·L + d`.
    pub pi: Option<Var>,
}

impl LossVars {
    pub fn breakdown<F: Real>(&self, tape: &Tape<F>) -> LossBreakdown {
        let get = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item().f64());
        LossBreakdown {
            face_rec: get(Some(self.face)),
            audio_rec: get(self.audio),
            gaze_rec: get(self.gaze),
            kl_shared: get(self.kl_shared),
            kl_modality: get(self.kl_modality),
            total: get(Some(self.total)),
        }
    }
}

impl<F: Real> Model<F> {
    fn encoder(&self, m: Modality) -> Result<&TcnLayout> {
        self.layouts().encoders[m.index()].as_ref().ok_or_else(|| {
            Error::invalid(format!(
                "variant {} has no {} encoder",
                self.variant(),
                m.name()
            ))
        })
    }

    fn decoder(&self, target: Target) -> Result<&TcnLayout> {
        let l = self.layouts();
        let found = match target {
            Target::Face => l.face.as_ref(),
            Target::Input(m) => l.inputs[m.index()].as_ref(),
        };
        found.ok_or_else(|| {
            Error::invalid(format!(
                "variant {} has no decoder for {target:?}",
                self.variant()
            ))
        })
    }

    fn check_frames(x: &Tensor<F>, width: usize, what: &str) -> Result<usize> {
        match x.shape() {
            [t, c] if *c == width && *t > 0 => Ok(*t),
            s => Err(Error::invalid(format!(
                "{what} input has shape {s:?}, expected [T, {width}]"
            ))),
        }
    }

    /// Standardises a raw `[T, D]` modality stream with the stored statistics.
    pub fn normalize(&self, m: Modality, raw: &Tensor<f64>) -> Result<Tensor<F>> {
        self.norm.for_modality(m).apply(raw)
    }

    pub fn encode_modality(&self, m: Modality, x: &Tensor<F>) -> Result<LatentGaussian<F>> {
        let enc = self.encoder(m)?;
        Self::check_frames(x, m.width(), m.name())?;
        let mut heads = enc.forward(self.params(), x, self.padding())?;
        let raw = heads.pop().unwrap();
        let mu = heads.pop().unwrap();
        Ok(LatentGaussian {
            mu,
            sigma: raw.map(sigma_from_raw),
        })
    }

    pub fn encode_mixture(
        &self,
        audio: Option<&Tensor<F>>,
        gaze: Option<&Tensor<F>>,
    ) -> Result<MixtureWeights<F>> {
        let mix = self.layouts().mixture.as_ref().ok_or_else(|| {
            Error::invalid(format!("variant {} has no mixture encoder", self.variant()))
        })?;
        let (Some(audio), Some(gaze)) = (audio, gaze) else {
            return Err(Error::invalid("mixture encoder needs both audio and gaze"));
        };
        let x = concat_inputs(audio, gaze)?;
        let logits = mix.forward(self.params(), &x, self.padding())?.remove(0);
        let (t, ml) = (logits.shape()[0], logits.channels());
        let l = self.config().latent;
        let m = ml / l;
        let mut pi = vec![F::zero(); m * t * l];
        let mut group = vec![F::zero(); m];
        for (ti, row) in logits.data().chunks(ml).enumerate() {
            for d in 0..l {
                for (j, g) in group.iter_mut().enumerate() {
                    *g = row[j * l + d];
                }
                softmax_in_place(&mut group);
                for (j, g) in group.iter().enumerate() {
                    pi[(j * t + ti) * l + d] = *g;
                }
            }
        }
        Ok(MixtureWeights {
            pi: Tensor::new(vec![m, t, l], pi)?,
        })
    }

    pub fn decode(&self, target: Target, z: &Tensor<F>) -> Result<Tensor<F>> {
        let dec = self.decoder(target)?;
        Self::check_frames(z, self.config().latent, "latent")?;
        Ok(dec.forward(self.params(), z, self.padding())?.remove(0))
    }

    fn check_usable(&self) -> Result<()> {
        if self.params().tensors().iter().any(|t| !t.is_finite()) {
            return Err(Error::State(
                "model parameters contain non-finite values".into(),
            ));
        }
        Ok(())
    }

    /// Deterministic face prediction from normalised inputs: `z_m = μ_m`,
    /// fused with the predicted weights (or `forced` ones), decoded to `[T, 256]`.
    pub fn infer_normalized(
        &self,
        audio: Option<&Tensor<F>>,
        gaze: Option<&Tensor<F>>,
        forced: Option<&MixtureWeights<F>>,
    ) -> Result<Tensor<F>> {
        self.check_usable()?;
        if let Some(reg) = &self.layouts().regression {
            let (Some(a), Some(g)) = (audio, gaze) else {
                return Err(Error::invalid("regression variant needs audio and gaze"));
            };
            let x = concat_inputs(a, g)?;
            return Ok(reg.forward(self.params(), &x, self.padding())?.remove(0));
        }
        let mods = self.variant().modalities();
        let mut mus = Vec::with_capacity(mods.len());
        for &m in mods {
            let x = match m {
                Modality::Audio => audio,
                Modality::Gaze => gaze,
            }
            .ok_or_else(|| Error::invalid(format!("missing {} input", m.name())))?;
            mus.push(self.encode_modality(m, x)?.mu);
        }
        let z = if mods.len() == 1 {
            mus.pop().unwrap()
        } else {
            let predicted;
            let w = match forced {
                Some(w) => w,
                None => {
                    predicted = self.encode_mixture(audio, gaze)?;
                    &predicted
                }
            };
            let (m, t, l) = w.dims();
            if m != mods.len() || mus[0].shape() != [t, l] {
                return Err(Error::invalid("forced weights have the wrong shape"));
            }
            let pis: Vec<&[F]> = (0..m).map(|j| w.modality(j)).collect();
            let xs: Vec<&[F]> = mus.iter().map(Tensor::data).collect();
            let mut z = vec![F::zero(); t * l];
            for ti in 0..t {
                let r = ti * l..(ti + 1) * l;
                let p: Vec<&[F]> = pis.iter().map(|p| &p[r.clone()]).collect();
                let x: Vec<&[F]> = xs.iter().map(|x| &x[r.clone()]).collect();
                fuse_means(&p, &x, &mut z[r.clone()]);
            }
            Tensor::new(vec![t, l], z)?
        };
        self.decode(Target::Face, &z)
    }

    /// Face prediction from raw (unnormalised) `[T, 80]` and `[T, 4]` streams.
    pub fn infer(&self, audio: Option<&Tensor<f64>>, gaze: Option<&Tensor<f64>>) -> Result<Tensor<F>> {
        let a = audio.map(|x| self.normalize(Modality::Audio, x)).transpose()?;
        let g = gaze.map(|x| self.normalize(Modality::Gaze, x)).transpose()?;
        self.infer_normalized(a.as_ref(), g.as_ref(), None)
    }

    /// Predicted mixture weights for raw input streams.
    pub fn mixture_weights(
        &self,
        audio: &Tensor<f64>,
        gaze: &Tensor<f64>,
    ) -> Result<MixtureWeights<F>> {
        let a = self.normalize(Modality::Audio, audio)?;
        let g = self.normalize(Modality::Gaze, gaze)?;
        self.encode_mixture(Some(&a), Some(&g))
    }

    /// Registers every parameter as a differentiable leaf, in table order.
    pub fn register(&self, tape: &mut Tape<F>) -> Vec<Var> {
        self.params()
            .tensors()
            .iter()
            .map(|t| tape.param(t.clone()))
            .collect()
    }

    /// Number of `[B, T, L]` noise tensors one loss evaluation consumes.
    pub fn noise_count(&self) -> usize {
        self.variant().modalities().len()
    }

    /// Records the training objective on `tape`, with parameters bound to `vars`.
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape<F>,
        vars: &[Var],
        batch: &Batch<F>,
        noise: &[Tensor<F>],
        kl_weight: F,
    ) -> Result<LossVars> {
        if vars.len() != self.params().len() {
            return Err(Error::invalid("parameter handles do not match the model"));
        }
        let (b, t) = batch.check()?;
        let pad = self.padding();
        let variant = self.variant();
        let face_t = tape.constant(batch.face.clone());
        if let Some(reg) = &self.layouts().regression {
            let a = tape.constant(batch.audio.clone());
            let g = tape.constant(batch.gaze.clone());
            let x = tape.concat_channels(&[a, g]);
            let pred = reg.on_tape(tape, vars, x, pad)?.remove(0);
            let face = tape.mse(pred, face_t);
            return Ok(LossVars {
                face,
                audio: None,
                gaze: None,
                kl_shared: None,
                kl_modality: None,
                total: face,
                pi: None,
            });
        }
        let mods = variant.modalities();
        let l = self.config().latent;
        if noise.len() != mods.len() || noise.iter().any(|n| n.shape() != [b, t, l]) {
            return Err(Error::invalid(format!(
                "expected {} noise tensors of shape [{b}, {t}, {l}]",
                mods.len()
            )));
        }
        let inputs: Vec<Var> = Modality::ALL
            .iter()
            .map(|&m| tape.constant(batch.input(m).clone()))
            .collect();
        let lo = F::of(LOG_SIGMA_MIN);
        let hi = F::of(LOG_SIGMA_MAX);
        let mut mus = Vec::new();
        let mut vars_m = Vec::new();
        let mut zs = Vec::new();
        for (&m, eps) in mods.iter().zip(noise) {
            let heads = self.encoder(m)?.on_tape(tape, vars, inputs[m.index()], pad)?;
            let sigma = tape.exp_clamped(heads[1], lo, hi);
            let e = tape.constant(eps.clone());
            let se = tape.mul(sigma, e);
            zs.push(tape.add(heads[0], se));
            mus.push(heads[0]);
            vars_m.push(tape.square(sigma));
        }
        let (z, mu_f, var_f, pi) = if mods.len() == 1 {
            (zs[0], mus[0], vars_m[0], None)
        } else {
            let x = tape.concat_channels(&inputs);
            let mix = self.layouts().mixture.as_ref().expect("two-modality variant");
            let logits = mix.on_tape(tape, vars, x, pad)?.remove(0);
            let pi = tape.softmax_groups(logits, mods.len());
            let pis: Vec<Var> = (0..mods.len())
                .map(|j| tape.slice_channels(pi, j * l, l))
                .collect();
            let mut z = None;
            let mut mu = None;
            let mut var = None;
            for j in 0..mods.len() {
                let pz = tape.mul(pis[j], zs[j]);
                let pm = tape.mul(pis[j], mus[j]);
                let p2 = tape.square(pis[j]);
                let pv = tape.mul(p2, vars_m[j]);
                z = Some(z.map_or(pz, |acc| tape.add(acc, pz)));
                mu = Some(mu.map_or(pm, |acc| tape.add(acc, pm)));
                var = Some(var.map_or(pv, |acc| tape.add(acc, pv)));
            }
            (z.unwrap(), mu.unwrap(), var.unwrap(), Some(pi))
        };
        let kl_shared = tape.kl_standard_normal(mu_f, var_f);
        let kl_modality = if mods.len() > 1 {
            let terms: Vec<(Var, F)> = mus
                .iter()
                .zip(&vars_m)
                .map(|(&m, &v)| (tape.kl_standard_normal(m, v), F::one()))
                .collect();
            Some(tape.combine(&terms))
        } else {
            None
        };
        let face_pred = self
            .decoder(Target::Face)?
            .on_tape(tape, vars, z, pad)?
            .remove(0);
        let face = tape.mse(face_pred, face_t);
        let mut rec = [None, None];
        if variant.reconstructs_inputs() {
            for &m in mods {
                let pred = self
                    .decoder(Target::Input(m))?
                    .on_tape(tape, vars, z, pad)?
                    .remove(0);
                rec[m.index()] = Some(tape.mse(pred, inputs[m.index()]));
            }
        }
        let mut terms = vec![(face, F::one())];
        terms.extend(rec.iter().flatten().map(|&v| (v, F::one())));
        if variant.kl_shared() {
            terms.push((kl_shared, kl_weight));
        }
        if variant.kl_modality() {
            if let Some(k) = kl_modality {
                terms.push((k, kl_weight));
            }
        }
        let total = tape.combine(&terms);
        Ok(LossVars {
            face,
            audio: rec[0],
            gaze: rec[1],
            kl_shared: Some(kl_shared),
            kl_modality,
            total,
            pi,
        })
    }

    /// Evaluates the loss terms without keeping gradients.
    pub fn loss(
        &self,
        batch: &Batch<F>,
        noise: &[Tensor<F>],
        kl_weight: f64,
    ) -> Result<LossBreakdown> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self
            .params()
            .tensors()
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let lv = self.loss_on_tape(&mut tape, &vars, batch, noise, F::of(kl_weight))?;
        Ok(lv.breakdown(&tape))
    }
}

fn concat_inputs<F: Real>(audio: &Tensor<F>, gaze: &Tensor<F>) -> Result<Tensor<F>> {
    let t = Model::<F>::check_frames(audio, AUDIO_DIM, "audio")?;
    let tg = Model::<F>::check_frames(gaze, GAZE_DIM, "gaze")?;
    if t != tg {
        return Err(Error::invalid(format!(
            "audio has {t} frames, gaze has {tg}"
        )));
    }
    let mut data = Vec::with_capacity(t * (AUDIO_DIM + GAZE_DIM));
    for (a, g) in audio.data().chunks(AUDIO_DIM).zip(gaze.data().chunks(GAZE_DIM)) {
        data.extend_from_slice(a);
        data.extend_from_slice(g);
    }
    Tensor::new(vec![t, AUDIO_DIM + GAZE_DIM], data)
}
