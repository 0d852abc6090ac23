use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arch {
    Vanilla,
    Informer,
    #[serde(rename = "PatchTST")]
    PatchTst,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Vanilla, Arch::Informer, Arch::PatchTst];

    pub fn id(self) -> u8 {
        match self {
            Arch::Vanilla => 0,
            Arch::Informer => 1,
            Arch::PatchTst => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            Arch::Vanilla => "Vanilla",
            Arch::Informer => "Informer",
            Arch::PatchTst => "PatchTST",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vanilla" | "transformer" => Ok(Arch::Vanilla),
            "informer" => Ok(Arch::Informer),
            "patchtst" => Ok(Arch::PatchTst),
            other => Err(Error::Config(format!("unknown architecture '{other}'"))),
        }
    }
}

/// Horizons used by the benchmark; others require `allow_custom_horizon`.
pub const STANDARD_HORIZONS: [usize; 2] = [24, 96];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    /// Input window length in hours.
    pub lookback: usize,
    /// Forecast window length in hours.
    pub horizon: usize,
    pub allow_custom_horizon: bool,
    /// PatchTST patch length.
    pub patch_len: usize,
    /// PatchTST patch stride.
    pub stride: usize,
    /// Informer sampling factor `c`.
    pub probsparse_factor: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Vanilla,
            d_model: 32,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            ff_dim: 64,
            dropout: 0.1,
            lookback: 168,
            horizon: 24,
            allow_custom_horizon: false,
            patch_len: 16,
            stride: 8,
            probsparse_factor: 5.0,
        }
    }
}

impl ModelConfig {
    /// Small configuration used by the gradient-check suites.
    pub fn toy(arch: Arch) -> Self {
        Self {
            arch,
            d_model: 8,
            n_heads: 2,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            ff_dim: 16,
            dropout: 0.0,
            lookback: 16,
            horizon: 4,
            allow_custom_horizon: true,
            patch_len: 4,
            stride: 4,
            probsparse_factor: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        for (name, v) in [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_encoder_layers", self.n_encoder_layers),
            ("ff_dim", self.ff_dim),
            ("lookback", self.lookback),
            ("horizon", self.horizon),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.arch != Arch::PatchTst && self.n_decoder_layers == 0 {
            return fail("n_decoder_layers must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !self.allow_custom_horizon && !STANDARD_HORIZONS.contains(&self.horizon) {
            return fail(format!(
                "horizon {} is not one of {STANDARD_HORIZONS:?}; set allow_custom_horizon to override",
                self.horizon
            ));
        }
        match self.arch {
            Arch::PatchTst => {
                if self.patch_len == 0 || self.patch_len > self.lookback {
                    return fail(format!(
                        "patch_len {} must be in 1..={}",
                        self.patch_len, self.lookback
                    ));
                }
                if self.stride == 0 {
                    return fail("stride must be at least 1".into());
                }
            }
            Arch::Informer => {
                if !(self.probsparse_factor > 0.0) || !self.probsparse_factor.is_finite() {
                    return fail(format!(
                        "probsparse_factor must be positive, got {}",
                        self.probsparse_factor
                    ));
                }
            }
            Arch::Vanilla => {}
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Number of patch tokens for PatchTST.
    pub fn n_patches(&self) -> usize {
        (self.lookback - self.patch_len) / self.stride + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        ModelConfig::default().validate().unwrap();
        for arch in Arch::ALL {
            ModelConfig::toy(arch).validate().unwrap();
        }
    }

    #[test]
    fn rejects_bad_heads_and_horizon() {
        let mut c = ModelConfig {
            n_heads: 3,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.n_heads = 4;
        c.horizon = 12;
        assert!(c.validate().is_err());
        c.allow_custom_horizon = true;
        c.validate().unwrap();
    }

    #[test]
    fn rejects_oversized_patch() {
        let c = ModelConfig {
            arch: Arch::PatchTst,
            lookback: 8,
            patch_len: 9,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn arch_names_parse() {
        for arch in Arch::ALL {
            assert_eq!(arch.name().parse::<Arch>().unwrap(), arch);
            assert_eq!(Arch::from_id(arch.id()), Some(arch));
        }
    }
}
