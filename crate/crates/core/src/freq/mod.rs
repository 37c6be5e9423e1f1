//! The frequentist two-stage estimator: REML linear mixed model on present
//! plots, Laplace logistic mixed model on all plots, plug-in prediction with
//! bias-corrected back-transformation, and a parametric bootstrap for the
//! county-level MSE.

mod glmm;
mod lmm;

pub use glmm::{fit_bernoulli_glmm_laplace, GlmmFit, SEPARATION_RIDGE};
pub use lmm::{fit_lmm_reml, LmmFit};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::FitInput;
use crate::data::GridUnit;
use crate::error::{Result, SaeError};
use crate::linalg::logistic;
use crate::rng::derived_rng;
use crate::transform::TransformSpec;

/// Both stage fits of the frequentist estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqFit {
    pub lmm: LmmFit,
    pub glmm: GlmmFit,
    pub transform: TransformSpec,
}

/// Fit the presence model on all rows and the continuous model on present rows.
pub fn fit_two_stage(input: &FitInput, transform: TransformSpec) -> Result<FreqFit> {
    let j = input.n_counties();
    let glmm = fit_bernoulli_glmm_laplace(&input.z, &input.v, input.q, &input.county, j)?;
    let rows: Vec<usize> = (0..input.n()).filter(|&i| input.z[i] == 1).collect();
    let p = input.p;
    let y: Vec<f64> = rows.iter().map(|&i| input.y[i]).collect();
    let x: Vec<f64> = rows.iter().flat_map(|&i| input.x[i * p..(i + 1) * p].iter().copied()).collect();
    let county: Vec<usize> = rows.iter().map(|&i| input.county[i]).collect();
    let lmm = fit_lmm_reml(&y, &x, p, &county, j)?;
    Ok(FreqFit { lmm, glmm, transform })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitPrediction {
    /// Continuous-stage prediction on the transformed scale.
    pub yhat: f64,
    pub phat: f64,
    /// Bias-corrected back-transform of `yhat` times `phat`.
    pub product: f64,
}

/// Plug-in predictions at grid units.
pub fn predict_units(fit: &FreqFit, grid: &[GridUnit]) -> Result<Vec<UnitPrediction>> {
    let j = fit.lmm.blups.len();
    grid.iter()
        .map(|u| {
            if u.county >= j || u.county >= fit.glmm.modes.len() {
                return Err(SaeError::UnknownCounty(u.county.to_string()));
            }
            if u.predictors_x.len() != fit.lmm.beta.len() || u.predictors_v.len() != fit.glmm.alpha.len() {
                return Err(SaeError::Dimension("grid predictors do not match the fit".into()));
            }
            let yhat = fit.lmm.predict(u.county, &u.predictors_x);
            let phat = fit.glmm.probability(u.county, &u.predictors_v);
            let g = fit.transform.bias_corrected_inverse(yhat, fit.lmm.tau2)?;
            Ok(UnitPrediction { yhat, phat, product: g * phat })
        })
        .collect()
}

/// County means of per-unit products; every county needs at least one unit.
pub fn estimate_county_means(products: &[f64], counties: &[usize], n_counties: usize) -> Result<Vec<f64>> {
    if products.len() != counties.len() {
        return Err(SaeError::Dimension("one county id per unit product is required".into()));
    }
    let mut sum = vec![0.0; n_counties];
    let mut count = vec![0usize; n_counties];
    for (&v, &c) in products.iter().zip(counties) {
        if c >= n_counties {
            return Err(SaeError::UnknownCounty(c.to_string()));
        }
        sum[c] += v;
        count[c] += 1;
    }
    if let Some(c) = count.iter().position(|&k| k == 0) {
        return Err(SaeError::InvalidInput(format!("county {c} has no grid units")));
    }
    Ok(sum.iter().zip(&count).map(|(s, &k)| s / k as f64).collect())
}

/// Means of the counties that have units; `None` for the rest.
pub fn partial_county_means(values: &[f64], counties: &[usize], n_counties: usize) -> Vec<Option<f64>> {
    let mut sum = vec![0.0; n_counties];
    let mut count = vec![0usize; n_counties];
    for (&v, &c) in values.iter().zip(counties) {
        sum[c] += v;
        count[c] += 1;
    }
    sum.iter().zip(&count).map(|(s, &k)| (k > 0).then(|| s / k as f64)).collect()
}

/// County estimates on a grid.
pub fn county_estimates(fit: &FreqFit, grid: &[GridUnit], n_counties: usize) -> Result<Vec<f64>> {
    let preds = predict_units(fit, grid)?;
    let products: Vec<f64> = preds.iter().map(|p| p.product).collect();
    let counties: Vec<usize> = grid.iter().map(|u| u.county).collect();
    estimate_county_means(&products, &counties, n_counties)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapMse {
    pub rmse: Vec<f64>,
    pub replicates: usize,
    pub failures: usize,
}

/// Parametric-bootstrap RMSE of the county estimates (refitting both stages).
pub fn bootstrap_mse(
    fit: &FreqFit,
    design: &FitInput,
    grid: &[GridUnit],
    b: usize,
    seed: u64,
) -> Result<BootstrapMse> {
    let transform = fit.transform;
    bootstrap_mse_with(fit, design, grid, b, seed, |input| fit_two_stage(input, transform))
}

/// Bootstrap with a caller-supplied refit.
///
/// Each replicate draws county effects from the fitted variance components,
/// presence indicators and transformed responses at the sample rows, and the
/// replicate's true county means over the grid (the bias-corrected mean times
/// the presence probability, averaged over units). Failed refits are dropped;
/// more than 10% failures is an error. Counties without grid units get NaN.
pub fn bootstrap_mse_with<F>(
    fit: &FreqFit,
    design: &FitInput,
    grid: &[GridUnit],
    b: usize,
    seed: u64,
    refit: F,
) -> Result<BootstrapMse>
where
    F: Fn(&FitInput) -> Result<FreqFit> + Sync,
{
    if b < 2 {
        return Err(SaeError::Config("bootstrap needs B >= 2".into()));
    }
    let j = design.n_counties();
    let counties: Vec<usize> = grid.iter().map(|u| u.county).collect();
    // fixed-effect parts of the generator, reused by every replicate
    let base_y: Vec<f64> = grid.iter().map(|u| fit.lmm.predict_fixed(&u.predictors_x)).collect();
    let base_p: Vec<f64> = grid.iter().map(|u| fit.glmm.linear_fixed(&u.predictors_v)).collect();
    let p = design.p;
    let q = design.q;
    let outcomes: Vec<Option<Vec<f64>>> = (0..b)
        .into_par_iter()
        .map(|rep| -> Result<Option<Vec<f64>>> {
            let mut rng = derived_rng(seed, &[0xB007, rep as u64]);
            let a: Vec<f64> =
                (0..j).map(|_| fit.glmm.sigma2_a.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect();
            let bj: Vec<f64> =
                (0..j).map(|_| fit.lmm.sigma2_b.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect();
            let mut truth_units = Vec::with_capacity(grid.len());
            for (k, u) in grid.iter().enumerate() {
                let g = fit.transform.bias_corrected_inverse(base_y[k] + bj[u.county], fit.lmm.tau2)?;
                truth_units.push(g * logistic(base_p[k] + a[u.county]));
            }
            let truth = partial_county_means(&truth_units, &counties, j);
            let mut boot = design.clone();
            let sd = fit.lmm.tau2.sqrt();
            for i in 0..design.n() {
                let c = design.county[i];
                let v = &design.v[i * q..(i + 1) * q];
                let x = &design.x[i * p..(i + 1) * p];
                let pr = logistic(fit.glmm.linear_fixed(v) + a[c]);
                let z = u8::from(rng.gen::<f64>() < pr);
                let eps: f64 = rng.sample(StandardNormal);
                boot.z[i] = z;
                boot.y[i] = if z == 1 { fit.lmm.predict_fixed(x) + bj[c] + sd * eps } else { 0.0 };
            }
            let est = match refit(&boot).and_then(|f| predict_units(&f, grid)) {
                Ok(e) => e,
                Err(_) => return Ok(None),
            };
            let products: Vec<f64> = est.iter().map(|u| u.product).collect();
            let est = partial_county_means(&products, &counties, j);
            Ok(Some(
                est.iter()
                    .zip(&truth)
                    .map(|(e, t)| match (e, t) {
                        (Some(e), Some(t)) => (e - t).powi(2),
                        _ => f64::NAN,
                    })
                    .collect(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    if failures * 10 > b {
        return Err(SaeError::Numerical(format!("{failures} of {b} bootstrap refits failed")));
    }
    let used = b - failures;
    let mut sq = vec![0.0; j];
    for o in outcomes.iter().flatten() {
        for (s, v) in sq.iter_mut().zip(o) {
            *s += v;
        }
    }
    Ok(BootstrapMse { rmse: sq.iter().map(|s| (s / used as f64).sqrt()).collect(), replicates: used, failures })
}

impl LmmFit {
    /// Fixed-effect part `beta0 + x'beta`.
    pub fn predict_fixed(&self, x: &[f64]) -> f64 {
        self.beta0 + x.iter().zip(&self.beta).map(|(a, b)| a * b).sum::<f64>()
    }
}

impl GlmmFit {
    /// Fixed-effect linear predictor `alpha0 + v'alpha`.
    pub fn linear_fixed(&self, v: &[f64]) -> f64 {
        self.alpha0 + v.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(county: usize, x: f64) -> GridUnit {
        GridUnit { x: 0.0, y: 0.0, county, predictors_x: vec![x], predictors_v: vec![x] }
    }

    fn fit(beta0: f64, tau2: f64, alpha0: f64) -> FreqFit {
        FreqFit {
            lmm: LmmFit { beta0, beta: vec![0.0], sigma2_b: 0.0, tau2, blups: vec![0.0; 2], reml_loglik: 0.0 },
            glmm: GlmmFit {
                alpha0,
                alpha: vec![0.0],
                sigma2_a: 0.0,
                modes: vec![0.0; 2],
                laplace_loglik: 0.0,
                std_errors: vec![0.0; 2],
                ridge: false,
                warnings: vec![],
            },
            transform: TransformSpec::SquareRoot,
        }
    }

    #[test]
    fn zero_coefficients_give_zero() {
        let p = predict_units(&fit(0.0, 0.0, 0.0), &[unit(0, 1.0)]).unwrap();
        assert_eq!(p[0].phat, 0.5);
        assert_eq!(p[0].product, 0.0);
    }

    #[test]
    fn certain_presence_gives_bias_corrected_square() {
        let p = predict_units(&fit(2.0, 0.5, 800.0), &[unit(0, 1.0)]).unwrap();
        assert_eq!(p[0].product, 4.5);
    }

    #[test]
    fn unknown_grid_county_is_error() {
        assert!(predict_units(&fit(2.0, 0.5, 0.0), &[unit(5, 1.0)]).is_err());
    }

    #[test]
    fn county_mean_examples() {
        assert_eq!(estimate_county_means(&[7.0, 7.0, 7.0], &[0, 0, 0], 1).unwrap(), vec![7.0]);
        assert_eq!(estimate_county_means(&[0.0, 10.0, 0.0, 10.0], &[0, 0, 0, 0], 1).unwrap(), vec![5.0]);
        assert!(estimate_county_means(&[1.0], &[0], 2).is_err());
    }

    #[test]
    fn bootstrap_rejects_small_b() {
        let design = FitInput {
            z: vec![1],
            v: vec![0.0],
            q: 1,
            y: vec![1.0],
            x: vec![0.0],
            p: 1,
            county: vec![0],
            coords: vec![[0.0, 0.0]],
            labels: Default::default(),
        };
        assert!(bootstrap_mse(&fit(1.0, 1.0, 0.0), &design, &[unit(0, 0.0)], 1, 1).is_err());
    }
}
