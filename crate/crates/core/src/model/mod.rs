//! Networks: the masked time-series autoencoder (MTSAE) and the plain
//! convolutional autoencoder (DCAE) baseline, with hand-written backward
//! passes, the masked loss and the Adam optimizer.

pub mod adam;
pub mod dcae;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod mtsae;
pub mod network;
pub mod params;
pub mod real;

use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use network::Network;
pub use loss::{masked_mse, masked_mse_grad, MaskedLoss, Reduction};
pub use params::{ParamSet, Tensor};
pub use real::Real;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Mtsae,
    Dcae,
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::Mtsae => "mtsae",
            Arch::Dcae => "dcae",
        })
    }
}

impl std::str::FromStr for Arch {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mtsae" => Ok(Arch::Mtsae),
            "dcae" => Ok(Arch::Dcae),
            other => Err(crate::Error::InvalidArgument(format!(
                "unknown architecture {other:?} (expected mtsae or dcae)"
            ))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub in_vars: usize,
    pub n_modules: usize,
    pub branch_filters: usize,
    pub kernel_sizes: [usize; 3],
    pub bottleneck: usize,
}

impl ModelConfig {
    /// Six inception modules, 4 x 32 = 128 output channels.
    pub fn mtsae(in_vars: usize) -> Self {
        Self {
            arch: Arch::Mtsae,
            in_vars,
            n_modules: 6,
            branch_filters: 32,
            kernel_sizes: [39, 19, 9],
            bottleneck: 32,
        }
    }

    pub fn dcae(in_vars: usize) -> Self {
        Self {
            arch: Arch::Dcae,
            ..Self::mtsae(in_vars)
        }
    }

    /// Channel count of the last inception module.
    pub fn embedding_dim(&self) -> usize {
        match self.arch {
            Arch::Mtsae => 4 * self.branch_filters,
            Arch::Dcae => dcae::BOTTLENECK,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_vars == 0 {
            return Err(Error::invalid("model needs at least one input variable"));
        }
        if self.arch == Arch::Dcae {
            return Ok(());
        }
        if self.n_modules == 0 || self.branch_filters == 0 {
            return Err(Error::invalid(
                "model needs at least one inception module and one filter per branch",
            ));
        }
        if let Some(k) = self.kernel_sizes.iter().find(|k| *k % 2 == 0) {
            return Err(Error::invalid(format!("kernel size {k} must be odd")));
        }
        Ok(())
    }
}
