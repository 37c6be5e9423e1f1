//! MCMC fitting of the eight Bayesian estimators.
//!
//! Two-stage models factor into an independent presence (Bernoulli) posterior
//! and a continuous-stage posterior fitted on present rows only; they are
//! combined at prediction time. Single-stage models fit only the continuous
//! stage, on all rows including exact zeros.

mod bernoulli;
mod diagnostics;
pub mod draws;
mod fit;
mod gaussian;

pub use bernoulli::{BernoulliData, BernoulliSampler, BernoulliState};
pub use diagnostics::{psrf, split_chains, ChainDiagnostics};
pub use draws::{BernoulliDraws, DrawLabels, GaussianDraws, PosteriorDraws};
pub use fit::{fit_bernoulli_stage, fit_gaussian_stage, run_chains, FitInput, StageRun};
pub use gaussian::{
    update_coefficients_joint, update_county_effects, update_fixed_effects,
    update_random_effect_variances, update_residual_variances, update_sigma2_w,
    update_spatial_effects, GaussianData, GaussianModel, GaussianSampler, GaussianState,
};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SaeError};
use crate::nngp::PhiPrior;
use crate::rng::derive_seed;

/// Prior hyperparameters shared by all Bayesian models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Priors {
    /// Normal prior variance of intercepts and regression coefficients.
    pub var_fixed: f64,
    /// Inverse-gamma shape for every variance component.
    pub ig_shape: f64,
    /// Inverse-gamma scale for every variance component.
    pub ig_scale: f64,
    pub phi_lower: f64,
    pub phi_upper: f64,
    /// Residual variance of the zero branch; held fixed.
    pub tau2_2: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            var_fixed: 1000.0,
            ig_shape: 2.0,
            ig_scale: 1.0,
            phi_lower: 0.003,
            phi_upper: 3.0,
            tau2_2: 1e-6,
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.var_fixed, self.ig_shape, self.ig_scale, self.phi_lower, self.tau2_2];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(SaeError::Config("prior hyperparameters must be positive".into()));
        }
        if !(self.phi_lower < self.phi_upper) {
            return Err(SaeError::Config("phi prior needs lower < upper".into()));
        }
        Ok(())
    }

    pub fn phi_prior(&self) -> PhiPrior {
        PhiPrior { lower: self.phi_lower, upper: self.phi_upper }
    }
}

/// How the continuous-stage regression coefficients are updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientBlocking {
    /// Fixed and county effects drawn together from their joint conditional.
    #[default]
    Joint,
    /// Fixed effects then county effects, each from its own conditional.
    Separate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Total retained draws across chains (M).
    pub retained: usize,
    pub seed: u64,
    /// Explicit per-chain seeds; derived from `seed` when absent.
    pub chain_seeds: Option<Vec<u64>>,
    /// Split-R-hat above this flags the fit as non-converged.
    pub rhat_threshold: f64,
    pub blocking: CoefficientBlocking,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            chains: 3,
            iterations: 15_000,
            burn_in: 5_000,
            thin: 10,
            retained: 3_000,
            seed: 1,
            chain_seeds: None,
            rhat_threshold: 1.1,
            blocking: CoefficientBlocking::Joint,
        }
    }
}

impl McmcConfig {
    /// A config retaining `per_chain` draws from each of `chains` chains.
    pub fn with_lengths(chains: usize, burn_in: usize, thin: usize, per_chain: usize, seed: u64) -> Self {
        McmcConfig {
            chains,
            iterations: burn_in + thin * per_chain,
            burn_in,
            thin,
            retained: chains * per_chain,
            seed,
            ..Default::default()
        }
    }

    pub fn retained_per_chain(&self) -> usize {
        (self.iterations.saturating_sub(self.burn_in)) / self.thin.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(SaeError::Config("at least one chain is required".into()));
        }
        if self.thin == 0 {
            return Err(SaeError::Config("thin must be >= 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(SaeError::Config("burn_in must be smaller than iterations".into()));
        }
        if (self.iterations - self.burn_in) % self.thin != 0 {
            return Err(SaeError::Config(
                "iterations - burn_in must be a multiple of thin".into(),
            ));
        }
        if self.retained_per_chain() * self.chains != self.retained {
            return Err(SaeError::Config(format!(
                "chains x retained per chain = {} x {} does not equal retained = {}",
                self.chains,
                self.retained_per_chain(),
                self.retained
            )));
        }
        if let Some(seeds) = &self.chain_seeds {
            if seeds.len() != self.chains {
                return Err(SaeError::Config("one seed per chain is required".into()));
            }
            let mut s = seeds.clone();
            s.sort_unstable();
            s.dedup();
            if s.len() != seeds.len() {
                return Err(SaeError::Config("chain seeds must be distinct".into()));
            }
        }
        if !(self.rhat_threshold >= 1.0) {
            return Err(SaeError::Config("rhat_threshold must be >= 1".into()));
        }
        Ok(())
    }

    pub fn chain_seed(&self, chain: usize) -> u64 {
        match &self.chain_seeds {
            Some(s) => s[chain],
            None => derive_seed(self.seed, &[0xC4A1, chain as u64]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_retains_three_thousand() {
        let c = McmcConfig::default();
        c.validate().unwrap();
        assert_eq!(c.retained_per_chain(), 1000);
        assert_eq!(c.retained, 3000);
    }

    #[test]
    fn duplicate_chain_seeds_rejected() {
        let c = McmcConfig { chain_seeds: Some(vec![5, 5, 6]), ..Default::default() };
        assert!(c.validate().unwrap_err().to_string().contains("distinct"));
        let c = McmcConfig { chain_seeds: Some(vec![5, 7, 6]), ..Default::default() };
        c.validate().unwrap();
    }

    #[test]
    fn inconsistent_lengths_rejected() {
        let c = McmcConfig { retained: 2000, ..Default::default() };
        assert!(c.validate().is_err());
        let c = McmcConfig { thin: 0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = McmcConfig::with_lengths(2, 100, 3, 50, 9);
        c.validate().unwrap();
        assert_eq!(c.retained, 100);
    }

    #[test]
    fn derived_chain_seeds_are_distinct() {
        let c = McmcConfig::default();
        let s: Vec<u64> = (0..3).map(|i| c.chain_seed(i)).collect();
        assert_ne!(s[0], s[1]);
        assert_ne!(s[1], s[2]);
    }

    #[test]
    fn default_priors_match_table_values() {
        let p = Priors::default();
        assert_eq!(p.var_fixed, 1000.0);
        assert_eq!((p.ig_shape, p.ig_scale), (2.0, 1.0));
        assert_eq!((p.phi_lower, p.phi_upper), (0.003, 3.0));
        assert_eq!(p.tau2_2, 1e-6);
        p.validate().unwrap();
    }
}
