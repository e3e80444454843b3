use std::fmt;
use std::str::FromStr;

use super::Modality;
use crate::error::{Error, Result};

/// Ablation variants.
///
/// | tag | KL on `Z_m` | KL on `Z_M` | input reconstruction |
/// |-----|-------------|-------------|----------------------|
/// | a   |             |             | yes                  |
/// | b   | yes         |             | yes                  |
/// | c   |             | yes         | yes                  |
/// | d   | yes         | yes         | yes                  |
/// | e   |             | yes         |                      |
///
/// `f` is a direct TCN regression from the concatenated inputs to the face
/// coefficients. The single-modality variants keep one encoder, no mixture,
/// a KL on their latent and reconstruction of their own input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelVariant {
    A,
    B,
    C,
    D,
    E,
    F,
    AudioOnly,
    GazeOnly,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 8] = [
        ModelVariant::A,
        ModelVariant::B,
        ModelVariant::C,
        ModelVariant::D,
        ModelVariant::E,
        ModelVariant::F,
        ModelVariant::AudioOnly,
        ModelVariant::GazeOnly,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ModelVariant::A => "a",
            ModelVariant::B => "b",
            ModelVariant::C => "c",
            ModelVariant::D => "d",
            ModelVariant::E => "e",
            ModelVariant::F => "f",
            ModelVariant::AudioOnly => "audio_only",
            ModelVariant::GazeOnly => "gaze_only",
        }
    }

    pub fn modalities(self) -> &'static [Modality] {
        match self {
            ModelVariant::F => &[],
            ModelVariant::AudioOnly => &[Modality::Audio],
            ModelVariant::GazeOnly => &[Modality::Gaze],
            _ => &Modality::ALL,
        }
    }

    pub fn reconstructs_inputs(self) -> bool {
        !matches!(self, ModelVariant::E | ModelVariant::F)
    }

    pub fn kl_shared(self) -> bool {
        matches!(self, ModelVariant::C | ModelVariant::D)
    }

    pub fn kl_modality(self) -> bool {
        matches!(self, ModelVariant::B | ModelVariant::D)
    }

    pub fn has_mixture(self) -> bool {
        self.modalities().len() > 1
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}`")))
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    /// TCN hidden width.
    pub channels: usize,
    /// Latent coefficients per frame.
    pub latent: usize,
    /// Dilated layers per TCN; layer `l` uses dilation `2^l`.
    pub layers: usize,
    pub taps: usize,
    pub bias: bool,
    /// Per-layer lookahead in frames for offline use; 0 is causal.
    pub lookahead: usize,
}

impl ModelConfig {
    pub fn new(variant: ModelVariant) -> Self {
        ModelConfig {
            variant,
            channels: 128,
            latent: 64,
            layers: 5,
            taps: 5,
            bias: true,
            lookahead: 0,
        }
    }

    pub fn with_size(mut self, channels: usize, latent: usize) -> Self {
        self.channels = channels;
        self.latent = latent;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.latent == 0 || self.layers == 0 || self.taps == 0 {
            return Err(Error::invalid("channels, latent, layers and taps must be >= 1"));
        }
        if self.layers > 16 {
            return Err(Error::invalid("at most 16 dilated layers"));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("variant", self.variant.tag().to_string()),
            ("channels", self.channels.to_string()),
            ("latent", self.latent.to_string()),
            ("layers", self.layers.to_string()),
            ("taps", self.taps.to_string()),
            ("bias", self.bias.to_string()),
            ("lookahead", self.lookahead.to_string()),
        ]
    }

    /// Applies one `key=value` setting; returns `false` for foreign keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num(key: &str, v: &str) -> Result<usize> {
            v.parse()
                .map_err(|_| Error::invalid(format!("`{key}` expects an integer, got `{v}`")))
        }
        match key {
            "variant" => self.variant = value.parse()?,
            "channels" => self.channels = num(key, value)?,
            "latent" => self.latent = num(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "taps" => self.taps = num(key, value)?,
            "lookahead" => self.lookahead = num(key, value)?,
            "bias" => {
                self.bias = value
                    .parse()
                    .map_err(|_| Error::invalid(format!("`bias` expects true/false, got `{value}`")))?
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}
