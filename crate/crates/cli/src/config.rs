//! JSON configuration for the `fit` and `simulate` commands.

use coxmeta_core::model::PriorConfig;
use coxmeta_core::pointgen::{LgcpSimConfig, RegionMixtureConfig};
use coxmeta_core::sampler::HmcConfig;
use serde::{Deserialize, Serialize};

/// Configuration for a model fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Covariates after the intercept that carry spatial fields (the
    /// intercept always does, so `k_star + 1` fields in total).
    pub k_star: usize,
    #[serde(default)]
    pub priors: PriorConfig,
    #[serde(default)]
    pub sampler: HmcConfig,
    /// Overrides the default initial value of the scaled decay coordinate.
    #[serde(default)]
    pub init_rho_scaled: Option<f64>,
}

/// Configuration for synthetic data, one of two generators.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimSpec {
    /// Draw intensity surfaces from the model itself and points from them.
    Lgcp(LgcpSimConfig),
    /// Place points uniformly in labelled regions with negative-binomial counts.
    RegionMixture(RegionMixtureConfig),
}
