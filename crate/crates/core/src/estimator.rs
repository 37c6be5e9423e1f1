//! Uniform driver for the nine estimators: standardize, fit, predict, and
//! report county estimates with an uncertainty measure and a 95% interval.

use serde::{Deserialize, Serialize};

use crate::bayes::{run_chains, DrawLabels, FitInput, McmcConfig, Priors};
use crate::data::{GridUnit, HasPredictors, ModelSpec, PlotRecord, StandardizeStats, Standardizer};
use crate::error::{Result, SaeError};
use crate::freq::{bootstrap_mse, county_estimates, fit_two_stage, predict_units};
use crate::predict::{quantile_type8, Predictor};
use crate::rng::derive_seed;
use crate::transform::TransformSpec;

/// Settings shared by every estimator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSettings {
    pub transform: TransformSpec,
    pub priors: Priors,
    pub mcmc: McmcConfig,
    pub bootstrap_b: usize,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        EstimatorSettings {
            transform: TransformSpec::SquareRoot,
            priors: Priors::default(),
            mcmc: McmcConfig::default(),
            bootstrap_b: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountyEstimate {
    pub estimate: f64,
    /// Bootstrap RMSE (frequentist) or posterior sd (Bayesian).
    pub rmse_hat: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorOutput {
    pub counties: Vec<CountyEstimate>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Point prediction and optional 95% predictive interval for one unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitPredictive {
    pub mean: f64,
    pub interval: Option<(f64, f64)>,
}

/// Standardization fitted on the sample and applied to both sample and grid.
/// Zero-variance columns are tolerated (left centered) since small samples
/// can produce them.
pub fn standardize_pair(
    sample: &[PlotRecord],
    grid: &[GridUnit],
    labels: &DrawLabels,
) -> Result<(Vec<PlotRecord>, Vec<GridUnit>, StandardizeStats)> {
    let xr: Vec<&[f64]> = sample.iter().map(|r| r.predictors_x()).collect();
    let vr: Vec<&[f64]> = sample.iter().map(|r| r.predictors_v()).collect();
    let stats = StandardizeStats {
        x: Standardizer::fit(&xr, &labels.x_names, &labels.x_names)?,
        v: Standardizer::fit(&vr, &labels.v_names, &labels.v_names)?,
    };
    Ok((stats.apply(sample)?, stats.apply(grid)?, stats))
}

fn seeds(seed: u64) -> (u64, u64, u64) {
    (derive_seed(seed, &[0xE5, 1]), derive_seed(seed, &[0xE5, 2]), derive_seed(seed, &[0xE5, 3]))
}

/// Fit `spec` on `sample` and estimate every county mean over `grid`.
/// Predictors are raw; standardization happens here.
pub fn run_estimator(
    spec: &ModelSpec,
    sample: &[PlotRecord],
    grid: &[GridUnit],
    labels: &DrawLabels,
    settings: &EstimatorSettings,
    seed: u64,
) -> Result<EstimatorOutput> {
    let j = labels.county_names.len();
    let (sample, grid, _) = standardize_pair(sample, grid, labels)?;
    let input = FitInput::from_records(&sample, settings.transform, labels.clone())?;
    let (mcmc_seed, pred_seed, boot_seed) = seeds(seed);
    if spec.is_bayesian() {
        let mcmc = McmcConfig { seed: mcmc_seed, chain_seeds: None, ..settings.mcmc.clone() };
        let (draws, diag) = run_chains(spec, &input, &settings.priors, &mcmc)?;
        let pred = Predictor::new(&draws, &grid, settings.transform, settings.priors.tau2_2, pred_seed)?;
        let (posts, _) = pred.aggregate(&grid)?;
        let counties = posts
            .iter()
            .map(|p| CountyEstimate { estimate: p.mean, rmse_hat: p.sd, lower: p.q025, upper: p.q975 })
            .collect();
        Ok(EstimatorOutput { counties, converged: diag.converged, warnings: diag.warnings })
    } else {
        let fit = fit_two_stage(&input, settings.transform)?;
        let est = county_estimates(&fit, &grid, j)?;
        let boot = bootstrap_mse(&fit, &input, &grid, settings.bootstrap_b, boot_seed)?;
        let mut warnings = fit.glmm.warnings.clone();
        if boot.failures > 0 {
            warnings.push(format!("{} bootstrap refits failed", boot.failures));
        }
        let counties = est
            .iter()
            .zip(&boot.rmse)
            .map(|(&e, &r)| CountyEstimate { estimate: e, rmse_hat: r, lower: e - 1.96 * r, upper: e + 1.96 * r })
            .collect();
        Ok(EstimatorOutput { counties, converged: true, warnings })
    }
}

/// Predict held-out plots on the original scale. Bayesian predictions are
/// posterior-predictive means with type-8 2.5/97.5% quantiles; frequentist
/// predictions are plug-in products with no interval.
pub fn predict_holdout(
    spec: &ModelSpec,
    train: &[PlotRecord],
    test: &[PlotRecord],
    labels: &DrawLabels,
    settings: &EstimatorSettings,
    seed: u64,
) -> Result<Vec<UnitPredictive>> {
    let units: Vec<GridUnit> = test.iter().map(GridUnit::from).collect();
    let (train, units, _) = standardize_pair(train, &units, labels)?;
    let input = FitInput::from_records(&train, settings.transform, labels.clone())?;
    let (mcmc_seed, pred_seed, _) = seeds(seed);
    if spec.is_bayesian() {
        let mcmc = McmcConfig { seed: mcmc_seed, chain_seeds: None, ..settings.mcmc.clone() };
        let (draws, _) = run_chains(spec, &input, &settings.priors, &mcmc)?;
        let pred = Predictor::new(&draws, &units, settings.transform, settings.priors.tau2_2, pred_seed)?;
        let idx: Vec<usize> = (0..units.len()).collect();
        pred.unit_draws(&units, &idx)?
            .into_iter()
            .map(|mut d| {
                if d.iter().any(|v| !v.is_finite()) {
                    return Err(SaeError::Numerical("non-finite predictive draw".into()));
                }
                let mean = crate::predict::stable_sum(&d) / d.len() as f64;
                d.sort_by(f64::total_cmp);
                Ok(UnitPredictive {
                    mean,
                    interval: Some((quantile_type8(&d, 0.025), quantile_type8(&d, 0.975))),
                })
            })
            .collect()
    } else {
        let fit = fit_two_stage(&input, settings.transform)?;
        Ok(predict_units(&fit, &units)?
            .into_iter()
            .map(|p| UnitPredictive { mean: p.product, interval: None })
            .collect())
    }
}
