//! Flat key-value run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::params::{ChessParams, LoopParams};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Construction {
    #[default]
    Loop,
    Chess,
}

/// Which assertions are enforced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// `kappa = 1`; stability and separation targets are measured only.
    Paper,
    /// `kappa` at Peclet `10^3`; targets enforced.
    #[default]
    Peclet,
}

/// Arrival-set margins for the loop construction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Margins {
    Paper,
    #[default]
    Substitute,
}

/// Mollification width of the chess datum and test function.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MollifierWidth {
    /// `a_0^{1+delta/2}`.
    Paper,
    /// A quarter cell.
    #[default]
    Grid,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub construction: Construction,
    pub preset: Preset,
    pub p: Option<f64>,
    pub delta: Option<f64>,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub gamma: Option<f64>,
    pub a0: Option<f64>,
    pub n_max: Option<usize>,
    /// Overrides the preset's diffusivity.
    pub kappa: Option<f64>,
    pub seed: u64,
    pub grid_n: Option<usize>,
    pub ensemble_size: Option<usize>,
    pub rescale_time: bool,
    /// Parity pair `(2 level, 2 level + 1)` for the non-uniqueness scenarios.
    pub level: usize,
    pub margins: Margins,
    pub mollifier: MollifierWidth,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn loop_params(&self) -> LoopParams {
        let d = LoopParams::default();
        LoopParams {
            p: self.p.unwrap_or(d.p),
            delta: self.delta.unwrap_or(d.delta),
            alpha: self.alpha.unwrap_or(d.alpha),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            a0: self.a0.unwrap_or(d.a0),
            n_max: self.n_max.unwrap_or(d.n_max),
            kappa: self.kappa.unwrap_or(d.kappa),
        }
    }

    pub fn chess_params(&self) -> ChessParams {
        let d = ChessParams::default();
        ChessParams {
            p: self.p.unwrap_or(d.p),
            delta: self.delta.unwrap_or(d.delta),
            gamma: self.gamma.unwrap_or(d.gamma),
            a0: self.a0.unwrap_or(d.a0),
            n_max: self.n_max.unwrap_or(d.n_max),
            kappa: self.kappa.unwrap_or(d.kappa),
        }
    }

    /// Diffusivity: the explicit key, else 1 (paper) or the Peclet-matched value.
    pub fn kappa_or(&self, peclet_kappa: f64) -> f64 {
        match (self.kappa, self.preset) {
            (Some(k), _) => k,
            (None, Preset::Paper) => 1.0,
            (None, Preset::Peclet) => peclet_kappa,
        }
    }

    pub fn enforced(&self) -> bool {
        self.preset == Preset::Peclet
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(Config::from_toml("kapa = 1.0"), Err(Error::Config(_))));
    }

    #[test]
    fn round_trip() {
        let c = Config::from_toml("construction = \"chess\"\ndelta = 0.2\nseed = 9\npreset = \"paper\"").unwrap();
        assert_eq!(c.construction, Construction::Chess);
        assert_eq!(c.chess_params().delta, 0.2);
        assert_eq!(Config::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }
}
