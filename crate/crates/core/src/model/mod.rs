//! Multimodal VAE with a per-coefficient mixture over modality embeddings.
//!
//! Each modality `m` has a TCN encoder producing `N(μ_m, σ_m²)` per frame and
//! latent coefficient. A separate mixture encoder reads the concatenated
//! inputs and emits convex weights `π_m` per coefficient. The fused latent is
//! `Z = Σ_m π_m Z_m`, which for independent Gaussians is distributed as
//! `N(Σ π_m μ_m, Σ π_m² σ_m²)`. Decoders reconstruct the face coefficients
//! and, depending on the variant, each input modality.

mod config;
mod forward;
mod params;
mod suite;
mod tcn;

pub use config::{ModelConfig, ModelVariant};
pub use forward::{
    fuse, kl_standard_normal, sample_latent, Batch, FusedLatent, LatentGaussian, LossBreakdown,
    LossVars, MixtureWeights,
};
pub use params::ParamSet;
pub use suite::{gradient_suite, GradSuiteReport};
pub use tcn::TcnLayout;

/// Negative slope of every leaky ReLU in the network.
pub const LEAKY_SLOPE: f64 = tcn::SLOPE;

#[allow(unused_imports)]
pub(crate) use forward::{fuse_means, sigma_from_raw};

use crate::error::{Error, Result};
use crate::features::{ChannelStats, AUDIO_DIM, FACE_DIM, GAZE_DIM};
use crate::real::Real;
use crate::tensor::Padding;
use tcn::TcnShape;

/// One input stream of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Audio,
    Gaze,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Audio, Modality::Gaze];

    pub fn width(self) -> usize {
        match self {
            Modality::Audio => AUDIO_DIM,
            Modality::Gaze => GAZE_DIM,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Gaze => "gaze",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Decoder outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Face,
    Input(Modality),
}

impl Target {
    pub fn width(self) -> usize {
        match self {
            Target::Face => FACE_DIM,
            Target::Input(m) => m.width(),
        }
    }
}

/// Training-set statistics used to standardise the inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub audio: ChannelStats,
    pub gaze: ChannelStats,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            audio: ChannelStats::identity(AUDIO_DIM),
            gaze: ChannelStats::identity(GAZE_DIM),
        }
    }
}

impl Normalization {
    pub fn for_modality(&self, m: Modality) -> &ChannelStats {
        match m {
            Modality::Audio => &self.audio,
            Modality::Gaze => &self.gaze,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layouts {
    pub encoders: [Option<TcnLayout>; 2],
    pub mixture: Option<TcnLayout>,
    pub face: Option<TcnLayout>,
    pub inputs: [Option<TcnLayout>; 2],
    pub regression: Option<TcnLayout>,
}

/// A model variant with its parameters and input statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    config: ModelConfig,
    params: ParamSet<F>,
    layouts: Layouts,
    pub norm: Normalization,
}

fn shapes(cfg: &ModelConfig) -> Vec<TcnShape> {
    let dil: Vec<usize> = (0..cfg.layers).map(|l| 1 << l).collect();
    let tcn = |prefix: &str, input: usize, heads: Vec<usize>, dilations: Vec<usize>| TcnShape {
        prefix: prefix.to_string(),
        input,
        channels: cfg.channels,
        taps: cfg.taps,
        dilations,
        heads,
        bias: cfg.bias,
    };
    let l = cfg.latent;
    let v = cfg.variant;
    let mut out = Vec::new();
    if v == ModelVariant::F {
        let twice: Vec<usize> = dil.iter().chain(&dil).copied().collect();
        out.push(tcn("reg", AUDIO_DIM + GAZE_DIM, vec![FACE_DIM], twice));
        return out;
    }
    let mods = v.modalities();
    for &m in mods {
        out.push(tcn(&format!("enc.{}", m.name()), m.width(), vec![l, l], dil.clone()));
    }
    if mods.len() > 1 {
        out.push(tcn(
            "mix",
            AUDIO_DIM + GAZE_DIM,
            vec![mods.len() * l],
            dil.clone(),
        ));
    }
    out.push(tcn("dec.face", l, vec![FACE_DIM], dil.clone()));
    if v.reconstructs_inputs() {
        for &m in mods {
            out.push(tcn(&format!("dec.{}", m.name()), l, vec![m.width()], dil.clone()));
        }
    }
    out
}

impl<F: Real> Model<F> {
    /// Fresh seeded initialisation: weights uniform in `±sqrt(1 / (C_in K))`,
    /// biases zero, drawn in parameter-table order.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let specs: Vec<_> = shapes(&config).iter().flat_map(TcnShape::specs).collect();
        let params = params::init_params(&specs, seed)?;
        Self::from_params(config, params, Normalization::default())
    }

    /// Rebuilds a model around existing tensors, checking the shape table.
    pub fn from_params(
        config: ModelConfig,
        params: ParamSet<F>,
        norm: Normalization,
    ) -> Result<Self> {
        config.validate()?;
        let shapes = shapes(&config);
        let specs: Vec<_> = shapes.iter().flat_map(TcnShape::specs).collect();
        if specs.len() != params.len() {
            return Err(Error::format(
                "params",
                format!("{} tensors, variant needs {}", params.len(), specs.len()),
            ));
        }
        for s in &specs {
            match params.get(&s.name) {
                Some(t) if t.shape() == s.shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::format(
                        "params",
                        format!("`{}` has shape {:?}, expected {:?}", s.name, t.shape(), s.shape),
                    ))
                }
                None => return Err(Error::format("params", format!("missing `{}`", s.name))),
            }
        }
        if norm.audio.width() != AUDIO_DIM || norm.gaze.width() != GAZE_DIM {
            return Err(Error::format("norm", "statistics have the wrong width"));
        }
        let find = |prefix: &str| {
            shapes
                .iter()
                .find(|s| s.prefix == prefix)
                .map(|s| s.layout(&params).expect("checked above"))
        };
        let layouts = Layouts {
            encoders: [find("enc.audio"), find("enc.gaze")],
            mixture: find("mix"),
            face: find("dec.face"),
            inputs: [find("dec.audio"), find("dec.gaze")],
            regression: find("reg"),
        };
        Ok(Model {
            config,
            params,
            layouts,
            norm,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> ModelVariant {
        self.config.variant
    }

    pub fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    /// Mutable access to parameter values; shapes cannot change.
    pub fn param_values_mut(&mut self) -> &mut [crate::tensor::Tensor<F>] {
        self.params.tensors_mut()
    }

    pub(crate) fn layouts(&self) -> &Layouts {
        &self.layouts
    }

    pub fn padding(&self) -> Padding {
        match self.config.lookahead {
            0 => Padding::Causal,
            n => Padding::Lookahead(n),
        }
    }

    /// Frames of input history that influence one face output frame.
    pub fn receptive_field(&self) -> usize {
        let l = &self.layouts;
        if let Some(r) = &l.regression {
            return r.receptive_field();
        }
        let enc = l
            .encoders
            .iter()
            .chain([&l.mixture])
            .flatten()
            .map(TcnLayout::receptive_field)
            .max()
            .unwrap_or(1);
        enc + l.face.as_ref().map_or(1, TcnLayout::receptive_field) - 1
    }

    /// Same model in another precision.
    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            layouts: self.layouts.clone(),
            norm: self.norm.clone(),
        }
    }
}

#[cfg(test)]
mod tests;
