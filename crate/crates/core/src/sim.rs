//! Synthetic populations by kNN imputation, repeated county-matched simple
//! random sampling, county-level design metrics and K-fold cross-validation.

use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::DrawLabels;
use crate::data::{GridUnit, ModelSpec, PlotRecord, Standardizer};
use crate::error::{Result, SaeError};
use crate::estimator::{predict_holdout, run_estimator, CountyEstimate, EstimatorSettings, UnitPredictive};
use crate::predict::stable_sum;
use crate::rng::{derive_seed, derived_rng};

/// How donors inside a kNN neighborhood are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DonorWeights {
    /// Inclusion counts from one bootstrap resample of each stratum's donors.
    #[default]
    Bootstrap,
    Uniform,
}

#[derive(Debug, Clone)]
pub struct SimPopulation {
    pub units: Vec<GridUnit>,
    /// Imputed biomass per unit.
    pub biomass: Vec<f64>,
    /// Donor index copied into each unit.
    pub donor: Vec<usize>,
    /// Exact county means of `biomass`.
    pub truth: Vec<f64>,
    pub warnings: Vec<String>,
}

/// k nearest entries of `pool` to `target`, ties broken by donor index.
fn nearest(target: &[f64], feats: &[Vec<f64>], pool: &[usize], k: usize, buf: &mut Vec<(f64, usize)>) {
    buf.clear();
    for &d in pool {
        let dist: f64 = target.iter().zip(&feats[d]).map(|(a, b)| (a - b).powi(2)).sum();
        if buf.len() == k {
            let last = buf[k - 1];
            if (dist, d) >= last {
                continue;
            }
            buf.pop();
        }
        let pos = buf.partition_point(|&e| e < (dist, d));
        buf.insert(pos, (dist, d));
    }
}

/// Impute biomass to every pixel from its k nearest donors of the same
/// stratum (Euclidean distance on `predictors_x`, standardized with donor
/// moments), picking one donor with probability proportional to its weight.
#[allow(clippy::too_many_arguments)]
pub fn generate_population(
    pixels: &[GridUnit],
    donors: &[PlotRecord],
    k: usize,
    pixel_strata: &[usize],
    donor_strata: &[usize],
    weights: DonorWeights,
    n_counties: usize,
    seed: u64,
) -> Result<SimPopulation> {
    if k == 0 {
        return Err(SaeError::Config("k must be >= 1".into()));
    }
    if pixel_strata.len() != pixels.len() || donor_strata.len() != donors.len() {
        return Err(SaeError::Dimension("one stratum label per pixel and per donor is required".into()));
    }
    if donors.is_empty() {
        return Err(SaeError::InvalidInput("no donors".into()));
    }
    let p = donors[0].predictors_x.len();
    if donors.iter().any(|d| d.predictors_x.len() != p) || pixels.iter().any(|u| u.predictors_x.len() != p) {
        return Err(SaeError::Dimension("pixels and donors need the same predictors".into()));
    }
    if let Some(u) = pixels.iter().find(|u| u.county >= n_counties) {
        return Err(SaeError::UnknownCounty(u.county.to_string()));
    }
    let names: Vec<String> = (0..p).map(|i| format!("x{i}")).collect();
    let rows: Vec<&[f64]> = donors.iter().map(|d| d.predictors_x.as_slice()).collect();
    let std = if donors.len() >= 2 {
        Standardizer::fit(&rows, &names, &names)?
    } else {
        Standardizer::fit(&[rows[0], rows[0]], &names, &names)?
    };
    let scale = |v: &[f64]| {
        let mut r = v.to_vec();
        std.apply_row(&mut r);
        r
    };
    let feats: Vec<Vec<f64>> = donors.iter().map(|d| scale(&d.predictors_x)).collect();

    let n_strata = pixel_strata.iter().chain(donor_strata).max().map_or(0, |m| m + 1);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); n_strata];
    for (d, &s) in donor_strata.iter().enumerate() {
        pools[s].push(d);
    }
    let mut weight = vec![1u64; donors.len()];
    if weights == DonorWeights::Bootstrap {
        weight.iter_mut().for_each(|w| *w = 0);
        for (s, pool) in pools.iter().enumerate() {
            let mut rng = derived_rng(seed, &[0x57A7, s as u64]);
            for _ in 0..pool.len() {
                weight[pool[rng.gen_range(0..pool.len())]] += 1;
            }
        }
        for pool in pools.iter_mut() {
            pool.retain(|&d| weight[d] > 0);
        }
    }
    let mut warnings = Vec::new();
    let mut used: Vec<bool> = vec![false; n_strata];
    for &s in pixel_strata {
        used[s] = true;
    }
    let mut k_of = vec![k; n_strata];
    for s in 0..n_strata {
        if !used[s] {
            continue;
        }
        if pools[s].is_empty() {
            return Err(SaeError::InvalidInput(format!("stratum {s} has no donors")));
        }
        if pools[s].len() < k {
            k_of[s] = pools[s].len();
            warnings.push(format!("stratum {s}: k truncated from {k} to {}", pools[s].len()));
        }
    }

    let donor: Vec<usize> = pixels
        .par_iter()
        .enumerate()
        .map_init(Vec::new, |buf, (i, u)| {
            let s = pixel_strata[i];
            nearest(&scale(&u.predictors_x), &feats, &pools[s], k_of[s], buf);
            let total: u64 = buf.iter().map(|&(_, d)| weight[d]).sum();
            let mut rng = derived_rng(seed, &[0x1D, i as u64]);
            let mut r = rng.gen_range(0..total);
            for &(_, d) in buf.iter() {
                if r < weight[d] {
                    return d;
                }
                r -= weight[d];
            }
            unreachable!("draw falls inside the total weight")
        })
        .collect();
    let biomass: Vec<f64> = donor.iter().map(|&d| donors[d].biomass).collect();
    let counties: Vec<usize> = pixels.iter().map(|u| u.county).collect();
    let truth = county_means(&biomass, &counties, n_counties)?;
    Ok(SimPopulation { units: pixels.to_vec(), biomass, donor, truth, warnings })
}

/// Exact per-county means; every county needs at least one value.
pub fn county_means(values: &[f64], counties: &[usize], n_counties: usize) -> Result<Vec<f64>> {
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); n_counties];
    for (&v, &c) in values.iter().zip(counties) {
        groups[c].push(v);
    }
    groups
        .iter()
        .enumerate()
        .map(|(c, g)| {
            if g.is_empty() {
                Err(SaeError::InvalidInput(format!("county {c} has no units")))
            } else {
                Ok(stable_sum(g) / g.len() as f64)
            }
        })
        .collect()
}

/// Simple random sample without replacement of `sizes[j]` units in each
/// county, assembled county by county in random within-county order.
pub fn draw_sample(pop: &SimPopulation, sizes: &[usize], seed: u64) -> Result<Vec<PlotRecord>> {
    let j = pop.truth.len();
    if sizes.len() != j {
        return Err(SaeError::Dimension(format!("{} sample sizes for {j} counties", sizes.len())));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); j];
    for (i, u) in pop.units.iter().enumerate() {
        members[u.county].push(i);
    }
    let mut out = Vec::with_capacity(sizes.iter().sum());
    for c in 0..j {
        if sizes[c] > members[c].len() {
            return Err(SaeError::InvalidInput(format!(
                "county {c}: sample size {} exceeds population {}",
                sizes[c],
                members[c].len()
            )));
        }
        let mut rng = derived_rng(seed, &[0x5A, c as u64]);
        for k in sample_indices(&mut rng, members[c].len(), sizes[c]) {
            let i = members[c][k];
            let u = &pop.units[i];
            out.push(PlotRecord {
                id: format!("u{i}"),
                x: u.x,
                y: u.y,
                county: u.county,
                biomass: pop.biomass[i],
                predictors_x: u.predictors_x.clone(),
                predictors_v: u.predictors_v.clone(),
            });
        }
    }
    Ok(out)
}

/// Design-based performance of one estimator in one county.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub county: usize,
    pub rmse: f64,
    pub bias: f64,
    pub rmse_hat_bias: f64,
    pub coverage: f64,
    /// Replicates that contributed.
    pub replicates: usize,
}

fn sorted_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    stable_sum(&v)
}

/// Metrics over replicate estimates of one county with true mean `truth`.
/// Sums run over sorted values so the result does not depend on replicate order.
pub fn county_metrics(county: usize, truth: f64, reps: &[CountyEstimate]) -> MetricsRecord {
    let d = reps.len() as f64;
    let rmse = (sorted_sum(reps.iter().map(|r| (r.estimate - truth).powi(2)).collect()) / d).sqrt();
    let bias = sorted_sum(reps.iter().map(|r| r.estimate).collect()) / d - truth;
    let rmse_hat_bias = sorted_sum(reps.iter().map(|r| r.rmse_hat).collect()) / d - rmse;
    let covered = reps.iter().filter(|r| r.lower <= truth && truth <= r.upper).count();
    MetricsRecord { county, rmse, bias, rmse_hat_bias, coverage: covered as f64 / d, replicates: reps.len() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOutcome {
    pub name: String,
    pub metrics: Vec<MetricsRecord>,
    /// Replicates on which the estimator failed.
    pub failures: usize,
    /// Replicates flagged as non-converged (still used).
    pub nonconverged: usize,
    pub warnings: Vec<String>,
}

/// Sampling design with a caller-supplied estimator runner
/// `run(estimator_index, sample, seed) -> (county estimates, converged)`.
pub fn run_design_with<F>(
    pop: &SimPopulation,
    sizes: &[usize],
    names: &[String],
    d: usize,
    seed: u64,
    run: F,
) -> Result<Vec<DesignOutcome>>
where
    F: Fn(usize, &[PlotRecord], u64) -> Result<(Vec<CountyEstimate>, bool)> + Sync,
{
    if d < 2 {
        return Err(SaeError::Config("the design needs d >= 2 replicates".into()));
    }
    let j = pop.truth.len();
    type Rep = Vec<std::result::Result<(Vec<CountyEstimate>, bool), String>>;
    let reps: Vec<Rep> = (0..d)
        .into_par_iter()
        .map(|i| -> Result<Rep> {
            let sample = draw_sample(pop, sizes, derive_seed(seed, &[0xD5, i as u64]))?;
            Ok((0..names.len())
                .map(|e| {
                    run(e, &sample, derive_seed(seed, &[0xE7, i as u64, e as u64]))
                        .and_then(|(c, ok)| {
                            if c.len() == j {
                                Ok((c, ok))
                            } else {
                                Err(SaeError::Dimension("one estimate per county is required".into()))
                            }
                        })
                        .map_err(|err| format!("replicate {i}: {err}"))
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(names
        .iter()
        .enumerate()
        .map(|(e, name)| {
            let mut per_county: Vec<Vec<CountyEstimate>> = vec![Vec::new(); j];
            let mut failures = 0;
            let mut nonconverged = 0;
            let mut warnings = Vec::new();
            for rep in &reps {
                match &rep[e] {
                    Ok((est, ok)) => {
                        nonconverged += usize::from(!ok);
                        for (c, v) in est.iter().enumerate() {
                            per_county[c].push(*v);
                        }
                    }
                    Err(msg) => {
                        failures += 1;
                        warnings.push(msg.clone());
                    }
                }
            }
            let metrics = (0..j).map(|c| county_metrics(c, pop.truth[c], &per_county[c])).collect();
            DesignOutcome { name: name.clone(), metrics, failures, nonconverged, warnings }
        })
        .collect())
}

/// Repeated sampling over `d` replicates for each listed estimator.
#[allow(clippy::too_many_arguments)]
pub fn run_design(
    pop: &SimPopulation,
    sizes: &[usize],
    specs: &[ModelSpec],
    labels: &DrawLabels,
    settings: &EstimatorSettings,
    d: usize,
    seed: u64,
) -> Result<Vec<DesignOutcome>> {
    let names: Vec<String> = specs.iter().map(|s| s.estimator().name().to_string()).collect();
    run_design_with(pop, sizes, &names, d, seed, |e, sample, s| {
        let out = run_estimator(&specs[e], sample, &pop.units, labels, settings, s)?;
        Ok((out.counties, out.converged))
    })
}

/// Unit-level cross-validation summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvMetrics {
    pub n: usize,
    pub rmspe: f64,
    pub bias: f64,
    /// Only when every prediction carries an interval.
    pub coverage: Option<f64>,
}

/// Fold of each unit: a uniform random permutation dealt round-robin.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(SaeError::Config("cross-validation needs K >= 2".into()));
    }
    if k > n {
        return Err(SaeError::Config(format!("K = {k} exceeds the {n} units")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut derived_rng(seed, &[0xF0]));
    let mut fold = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold[i] = pos % k;
    }
    Ok(fold)
}

pub fn cv_metrics(preds: &[UnitPredictive], observed: &[f64]) -> CvMetrics {
    let n = preds.len() as f64;
    let err: Vec<f64> = preds.iter().zip(observed).map(|(p, y)| p.mean - y).collect();
    let sq: Vec<f64> = err.iter().map(|e| e * e).collect();
    let coverage = if preds.iter().all(|p| p.interval.is_some()) {
        let hits = preds
            .iter()
            .zip(observed)
            .filter(|(p, y)| {
                let (lo, hi) = p.interval.expect("checked above");
                lo <= **y && **y <= hi
            })
            .count();
        Some(hits as f64 / n)
    } else {
        None
    };
    CvMetrics { n: preds.len(), rmspe: (stable_sum(&sq) / n).sqrt(), bias: stable_sum(&err) / n, coverage }
}

/// K-fold cross-validation with a caller-supplied fold predictor
/// `predict(fold, train, test, seed)`. Returns the metrics and the
/// per-unit predictions in input order.
pub fn kfold_cv_with<F>(records: &[PlotRecord], k: usize, seed: u64, predict: F) -> Result<(CvMetrics, Vec<UnitPredictive>)>
where
    F: Fn(usize, &[PlotRecord], &[PlotRecord], u64) -> Result<Vec<UnitPredictive>> + Sync,
{
    let fold = fold_assignment(records.len(), k, seed)?;
    let results: Vec<Result<(Vec<usize>, Vec<UnitPredictive>)>> = (0..k)
        .into_par_iter()
        .map(|f| {
            let test_idx: Vec<usize> = (0..records.len()).filter(|&i| fold[i] == f).collect();
            let train: Vec<PlotRecord> = records.iter().zip(&fold).filter(|(_, &g)| g != f).map(|(r, _)| r.clone()).collect();
            let test: Vec<PlotRecord> = test_idx.iter().map(|&i| records[i].clone()).collect();
            let preds = predict(f, &train, &test, derive_seed(seed, &[0xCF, f as u64]))
                .map_err(|e| e.context(&format!("fold {f}")))?;
            if preds.len() != test.len() {
                return Err(SaeError::Dimension(format!("fold {f}: wrong number of predictions")));
            }
            Ok((test_idx, preds))
        })
        .collect();
    let mut out = vec![UnitPredictive { mean: f64::NAN, interval: None }; records.len()];
    for r in results {
        let (idx, preds) = r?;
        for (i, p) in idx.into_iter().zip(preds) {
            out[i] = p;
        }
    }
    let observed: Vec<f64> = records.iter().map(|r| r.biomass).collect();
    Ok((cv_metrics(&out, &observed), out))
}

/// K-fold cross-validation of one estimator on raw plot records.
pub fn kfold_cv(
    records: &[PlotRecord],
    k: usize,
    spec: &ModelSpec,
    labels: &DrawLabels,
    settings: &EstimatorSettings,
    seed: u64,
) -> Result<(CvMetrics, Vec<UnitPredictive>)> {
    kfold_cv_with(records, k, seed, |_, train, test, s| predict_holdout(spec, train, test, labels, settings, s))
}

fn csv_err(path: &Path, e: csv::Error) -> SaeError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => SaeError::io(path.display().to_string(), io),
        other => SaeError::InvalidInput(format!("csv error on {}: {other:?}", path.display())),
    }
}

/// Per-estimator, per-county design metrics.
pub fn write_metrics_csv(path: &Path, county_names: &[String], outcomes: &[DesignOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["estimator", "county", "rmse", "bias", "rmse_hat_bias", "coverage", "replicates", "failures"])
        .map_err(|e| csv_err(path, e))?;
    for o in outcomes {
        for m in &o.metrics {
            w.write_record([
                o.name.clone(),
                county_names[m.county].clone(),
                m.rmse.to_string(),
                m.bias.to_string(),
                m.rmse_hat_bias.to_string(),
                m.coverage.to_string(),
                m.replicates.to_string(),
                o.failures.to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| SaeError::io(path.display().to_string(), e))
}

/// Per-estimator cross-validation metrics; coverage blank when absent.
pub fn write_cv_csv(path: &Path, rows: &[(String, CvMetrics)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["estimator", "n", "bias", "rmspe", "coverage"]).map_err(|e| csv_err(path, e))?;
    for (name, m) in rows {
        w.write_record([
            name.clone(),
            m.n.to_string(),
            m.bias.to_string(),
            m.rmspe.to_string(),
            m.coverage.map(|c| c.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| SaeError::io(path.display().to_string(), e))
}

/// Parameters of the built-in synthetic landscape: a lattice of square
/// counties, a smooth canopy-cover covariate, a hidden smooth field that
/// only enters donor generation and matching, and zero-inflated donors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticLandscape {
    pub counties_x: usize,
    pub counties_y: usize,
    /// Side of one county block (km).
    pub county_km: f64,
    /// Requested pixel total; rounded up to a square lattice per county.
    pub pixels: usize,
    pub donors_per_county: usize,
    /// Logit of presence: intercept, cover slope, hidden-field slope.
    pub presence: [f64; 3],
    /// Square-root biomass mean: intercept, cover slope, hidden-field slope.
    pub growth: [f64; 3],
    /// Residual sd on the square-root scale.
    pub growth_sd: f64,
    /// Wavelength range (km) of the hidden field's components.
    pub hidden_wavelength: [f64; 2],
}

impl Default for SyntheticLandscape {
    fn default() -> Self {
        SyntheticLandscape {
            counties_x: 4,
            counties_y: 3,
            county_km: 12.0,
            pixels: 100_000,
            donors_per_county: 40,
            presence: [-0.7, 1.5, 1.0],
            growth: [8.0, 2.0, 1.5],
            growth_sd: 1.5,
            hidden_wavelength: [3.0, 10.0],
        }
    }
}

/// Pixels and donors of a synthetic landscape. Both carry
/// `predictors_x = [cover, hidden]` (matching space) and
/// `predictors_v = [cover]`; [`Landscape::model_view`] drops the hidden column.
#[derive(Debug, Clone)]
pub struct Landscape {
    pub pixels: Vec<GridUnit>,
    pub pixel_strata: Vec<usize>,
    pub donors: Vec<PlotRecord>,
    pub donor_strata: Vec<usize>,
    pub county_names: Vec<String>,
}

struct Field {
    waves: Vec<(f64, f64, f64)>,
    norm: f64,
}

impl Field {
    fn new(rng: &mut impl Rng, n: usize, min_len: f64, max_len: f64) -> Self {
        let waves = (0..n)
            .map(|_| {
                let len = rng.gen_range(min_len..max_len);
                let angle = rng.gen_range(0.0..std::f64::consts::PI);
                let k = 2.0 * std::f64::consts::PI / len;
                (k * angle.cos(), k * angle.sin(), rng.gen_range(0.0..2.0 * std::f64::consts::PI))
            })
            .collect();
        // each cosine has variance 1/2
        Field { waves, norm: (2.0 / n as f64).sqrt() }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        self.norm * self.waves.iter().map(|&(a, b, c)| (a * x + b * y + c).cos()).sum::<f64>()
    }
}

impl SyntheticLandscape {
    pub fn n_counties(&self) -> usize {
        self.counties_x * self.counties_y
    }

    pub fn generate(&self, seed: u64) -> Result<Landscape> {
        let j = self.n_counties();
        if j == 0 || self.pixels < j || !(self.county_km > 0.0) || self.donors_per_county < 2 || !(self.growth_sd >= 0.0)
            || !(0.0 < self.hidden_wavelength[0] && self.hidden_wavelength[0] < self.hidden_wavelength[1]) {
            return Err(SaeError::Config("synthetic landscape needs counties, pixels >= counties, donors >= 2".into()));
        }
        let mut rng = derived_rng(seed, &[0x1A, 0]);
        let cover_field = Field::new(&mut rng, 8, 15.0, 45.0);
        let hidden_field = Field::new(&mut rng, 8, self.hidden_wavelength[0], self.hidden_wavelength[1]);
        let side = ((self.pixels as f64 / j as f64).sqrt().ceil()) as usize;
        let step = self.county_km / side as f64;
        let covariates = |x: f64, y: f64, noise: f64| {
            let cover = (50.0 + 25.0 * cover_field.at(x, y) + noise).clamp(0.0, 100.0);
            (cover, hidden_field.at(x, y))
        };
        let stratum = |cover: f64| usize::from(cover >= 50.0);
        let mut pixels = Vec::with_capacity(j * side * side);
        let mut pixel_strata = Vec::with_capacity(j * side * side);
        let mut donors = Vec::with_capacity(j * self.donors_per_county);
        let mut donor_strata = Vec::with_capacity(j * self.donors_per_county);
        let scaled = |cover: f64| (cover - 50.0) / 25.0;
        for c in 0..j {
            let ox = (c % self.counties_x) as f64 * self.county_km;
            let oy = (c / self.counties_x) as f64 * self.county_km;
            let mut prng = derived_rng(seed, &[0x1A, 1, c as u64]);
            for a in 0..side {
                for b in 0..side {
                    let x = ox + (a as f64 + 0.5) * step;
                    let y = oy + (b as f64 + 0.5) * step;
                    let (cover, hidden) = covariates(x, y, 5.0 * prng.sample::<f64, _>(rand_distr::StandardNormal));
                    pixels.push(GridUnit { x, y, county: c, predictors_x: vec![cover, hidden], predictors_v: vec![cover] });
                    pixel_strata.push(stratum(cover));
                }
            }
            let mut drng = derived_rng(seed, &[0x1A, 2, c as u64]);
            for i in 0..self.donors_per_county {
                let x = ox + drng.gen_range(0.0..self.county_km);
                let y = oy + drng.gen_range(0.0..self.county_km);
                let (cover, hidden) = covariates(x, y, 5.0 * drng.sample::<f64, _>(rand_distr::StandardNormal));
                let s = scaled(cover);
                let eta = self.presence[0] + self.presence[1] * s + self.presence[2] * hidden;
                let present = drng.gen::<f64>() < crate::linalg::logistic(eta);
                let e: f64 = drng.sample(rand_distr::StandardNormal);
                let root = self.growth[0] + self.growth[1] * s + self.growth[2] * hidden + self.growth_sd * e;
                let biomass = if present { root.max(0.5).powi(2) } else { 0.0 };
                donors.push(PlotRecord {
                    id: format!("d{c}_{i}"),
                    x,
                    y,
                    county: c,
                    biomass,
                    predictors_x: vec![cover, hidden],
                    predictors_v: vec![cover],
                });
                donor_strata.push(stratum(cover));
            }
        }
        Ok(Landscape {
            pixels,
            pixel_strata,
            donors,
            donor_strata,
            county_names: (0..j).map(|c| format!("C{:02}", c + 1)).collect(),
        })
    }
}

impl Landscape {
    /// Donor counts per county, the default matched sample sizes.
    pub fn matched_sizes(&self) -> Vec<usize> {
        let mut n = vec![0; self.county_names.len()];
        for d in &self.donors {
            n[d.county] += 1;
        }
        n
    }

    /// Drop the hidden matching column from a population's units.
    pub fn model_view(pop: &mut SimPopulation) {
        for u in &mut pop.units {
            u.predictors_x.truncate(1);
        }
    }

    pub fn labels(&self) -> DrawLabels {
        DrawLabels {
            x_names: vec!["cover".into()],
            v_names: vec!["cover".into()],
            county_names: self.county_names.clone(),
        }
    }
}
