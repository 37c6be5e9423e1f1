//! Posterior-predictive simulation at grid units and county aggregation.
//!
//! One predictive draw is made per unit and retained iteration. Each unit
//! owns a random stream derived from the prediction seed and its index, so
//! results do not depend on batching or worker count. Counties are reduced
//! with a running per-draw accumulator.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{BernoulliState, GaussianState, PosteriorDraws};
use crate::data::GridUnit;
use crate::error::{Result, SaeError};
use crate::linalg::logistic;
use crate::nngp::KrigingPlan;
use crate::rng::{derived_rng, SaeRng};
use crate::transform::TransformSpec;

/// Quantile with the median-unbiased interpolation (Hyndman-Fan type 8).
/// `sorted` must be ascending and non-empty.
pub fn quantile_type8(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    let h = (n as f64 + 1.0 / 3.0) * p + 1.0 / 3.0;
    if h <= 1.0 {
        return sorted[0];
    }
    if h >= n as f64 {
        return sorted[n - 1];
    }
    let lo = h.floor();
    let i = lo as usize - 1;
    sorted[i] + (h - lo) * (sorted[i + 1] - sorted[i])
}

/// Compensated (Neumaier) sum.
pub fn stable_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Posterior of one county mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountyPosterior {
    pub county: usize,
    pub draws: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

impl CountyPosterior {
    pub fn from_draws(county: usize, draws: Vec<f64>) -> Result<Self> {
        if draws.is_empty() {
            return Err(SaeError::InvalidInput("county posterior needs at least one draw".into()));
        }
        let mean = summarize_point(&draws);
        let var = if draws.len() > 1 {
            draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64
        } else {
            0.0
        };
        let mut sorted = draws.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(CountyPosterior {
            county,
            mean,
            sd: var.sqrt(),
            q025: quantile_type8(&sorted, 0.025),
            q975: quantile_type8(&sorted, 0.975),
            draws,
        })
    }

    /// Posterior variance, used as the MSE estimate.
    pub fn mse(&self) -> f64 {
        self.sd * self.sd
    }
}

/// Posterior mean of the county draws.
pub fn summarize_point(draws: &[f64]) -> f64 {
    stable_sum(draws) / draws.len() as f64
}

/// Running per-draw sums over the units of one county.
#[derive(Debug, Clone)]
pub struct CountyAccumulator {
    sums: Vec<f64>,
    units: usize,
}

impl CountyAccumulator {
    pub fn new(m: usize) -> Self {
        CountyAccumulator { sums: vec![0.0; m], units: 0 }
    }

    pub fn add_unit(&mut self, draws: &[f64]) -> Result<()> {
        if draws.len() != self.sums.len() {
            return Err(SaeError::Dimension("unit draw count differs from county".into()));
        }
        for (s, d) in self.sums.iter_mut().zip(draws) {
            *s += d;
        }
        self.units += 1;
        Ok(())
    }

    pub fn finish(self, county: usize) -> Result<CountyPosterior> {
        if self.units == 0 {
            return Err(SaeError::InvalidInput(format!("county {county} has no grid units")));
        }
        let k = self.units as f64;
        CountyPosterior::from_draws(county, self.sums.into_iter().map(|s| s / k).collect())
    }
}

/// Average per-unit draw vectors of one county, draw by draw.
pub fn aggregate_county(unit_draws: &[Vec<f64>], county: usize) -> Result<CountyPosterior> {
    let m = unit_draws.first().map(|d| d.len()).ok_or_else(|| {
        SaeError::InvalidInput(format!("county {county} has no grid units"))
    })?;
    let mut acc = CountyAccumulator::new(m);
    for d in unit_draws {
        acc.add_unit(d)?;
    }
    acc.finish(county)
}

/// Per-unit posterior means for map-style output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSummary {
    pub presence: f64,
    pub biomass: f64,
}

struct DrawParams {
    bern: Option<BernoulliState>,
    gauss: GaussianState,
}

/// Posterior-predictive engine for a set of prediction units.
pub struct Predictor<'a> {
    draws: &'a PosteriorDraws,
    transform: TransformSpec,
    tau2_2: f64,
    seed: u64,
    params: Vec<DrawParams>,
    plan: Option<KrigingPlan>,
    w_offset: usize,
}

impl<'a> Predictor<'a> {
    pub fn new(
        draws: &'a PosteriorDraws,
        units: &[GridUnit],
        transform: TransformSpec,
        tau2_2: f64,
        seed: u64,
    ) -> Result<Self> {
        let j = draws.labels.county_names.len();
        let p = draws.labels.x_names.len();
        let q = draws.labels.v_names.len();
        for u in units {
            if u.county >= j {
                return Err(SaeError::UnknownCounty(u.county.to_string()));
            }
            if u.predictors_x.len() != p || (draws.bernoulli.is_some() && u.predictors_v.len() != q) {
                return Err(SaeError::Dimension(format!(
                    "unit predictors ({} x, {} v) do not match the fit ({p} x, {q} v)",
                    u.predictors_x.len(),
                    u.predictors_v.len()
                )));
            }
        }
        let m = draws.n_draws();
        let params = (0..m)
            .map(|s| {
                let mut gauss = draws.gaussian.state(s);
                gauss.w = Vec::new();
                DrawParams { bern: draws.bernoulli.as_ref().map(|b| b.state(s)), gauss }
            })
            .collect();
        let (plan, w_offset) = match draws.gaussian.w_offset() {
            Some(off) => {
                let coords: Vec<[f64; 2]> = units.iter().map(|u| [u.x, u.y]).collect();
                let m_nb = draws.spec.nngp_neighbors().max(1);
                (Some(KrigingPlan::new(&coords, &draws.gaussian.sites, m_nb)?), off)
            }
            None => (None, 0),
        };
        Ok(Predictor { draws, transform, tau2_2, seed, params, plan, w_offset })
    }

    pub fn n_draws(&self) -> usize {
        self.params.len()
    }

    /// Simulate every draw for the given units (indices into the unit list
    /// passed to `new`), calling `sink(position, draw, presence_prob, value)`.
    fn run<F: FnMut(usize, usize, f64, f64)>(&self, units: &[GridUnit], idx: &[usize], mut sink: F) -> Result<()> {
        // visit units grouped by shared kriging neighbor set
        let mut order: Vec<usize> = (0..idx.len()).collect();
        if let Some(plan) = &self.plan {
            order.sort_by_key(|&k| (plan.group_of(idx[k]), idx[k]));
        }
        let mut rngs: Vec<SaeRng> = idx.iter().map(|&u| derived_rng(self.seed, &[0x9D, u as u64])).collect();
        let mut scratch = Vec::new();
        let mut start = 0;
        while start < order.len() {
            let group = self.plan.as_ref().map(|p| p.group_of(idx[order[start]]));
            let mut end = start + 1;
            while end < order.len() && self.plan.as_ref().map(|p| p.group_of(idx[order[end]])) == group {
                end += 1;
            }
            for (s, par) in self.params.iter().enumerate() {
                let factor = match (&self.plan, group) {
                    (Some(plan), Some(g)) => {
                        let sp = par.gauss.spatial.expect("spatial draws present");
                        Some(plan.factor_group(g, sp.phi)?)
                    }
                    _ => None,
                };
                for &k in &order[start..end] {
                    let u = &units[idx[k]];
                    let rng = &mut rngs[k];
                    let (prob, present) = match &par.bern {
                        Some(b) => {
                            let eta = b.alpha0
                                + b.county[u.county]
                                + u.predictors_v.iter().zip(&b.alpha).map(|(a, c)| a * c).sum::<f64>();
                            let pr = logistic(eta);
                            (pr, rng.gen::<f64>() < pr)
                        }
                        None => (1.0, true),
                    };
                    let t = if present {
                        let g = &par.gauss;
                        let mut mean = g.fixed_part(&u.predictors_x) + g.county_part(u.county, &u.predictors_x);
                        if let (Some(plan), Some(f)) = (&self.plan, &factor) {
                            let row = self.draws.gaussian.table.row(s);
                            let n_sites = self.draws.gaussian.sites.len();
                            let w_obs = &row[self.w_offset..self.w_offset + n_sites];
                            let sp = g.spatial.expect("spatial draws present");
                            let (mu, var) = plan.conditional(idx[k], f, w_obs, sp.sigma2_w, &mut scratch);
                            mean += mu + var.sqrt() * rng.sample::<f64, _>(StandardNormal);
                        }
                        mean + g.tau2_of(u.county).sqrt() * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        self.tau2_2.sqrt() * rng.sample::<f64, _>(StandardNormal)
                    };
                    sink(k, s, prob, self.transform.naive_inverse(t));
                }
            }
            start = end;
        }
        Ok(())
    }

    /// Back-transformed predictive draws for each listed unit (row per unit).
    pub fn unit_draws(&self, units: &[GridUnit], idx: &[usize]) -> Result<Vec<Vec<f64>>> {
        let m = self.n_draws();
        let mut out = vec![vec![0.0; m]; idx.len()];
        self.run(units, idx, |k, s, _, v| out[k][s] = v)?;
        Ok(out)
    }

    /// County posteriors for all counties plus per-unit summaries, in unit order.
    pub fn aggregate(&self, units: &[GridUnit]) -> Result<(Vec<CountyPosterior>, Vec<UnitSummary>)> {
        let all: Vec<usize> = (0..self.draws.labels.county_names.len()).collect();
        let (posts, summaries) = self.aggregate_counties(units, &all)?;
        let mut unit_summaries = vec![UnitSummary { presence: 0.0, biomass: 0.0 }; units.len()];
        for (i, s) in summaries {
            unit_summaries[i] = s;
        }
        Ok((posts, unit_summaries))
    }

    /// Posteriors of the listed counties with the summaries of their units
    /// keyed by unit index. Random streams are tied to unit indices, so
    /// splitting counties into batches reproduces a single full run.
    pub fn aggregate_counties(
        &self,
        units: &[GridUnit],
        counties: &[usize],
    ) -> Result<(Vec<CountyPosterior>, Vec<(usize, UnitSummary)>)> {
        let m = self.n_draws();
        let mut by_county = vec![Vec::new(); self.draws.labels.county_names.len()];
        for (i, u) in units.iter().enumerate() {
            by_county[u.county].push(i);
        }
        let results: Vec<Result<(CountyPosterior, Vec<(usize, UnitSummary)>)>> = counties
            .par_iter()
            .map(|&c| {
                let idx = &by_county[c];
                if idx.is_empty() {
                    return Err(SaeError::InvalidInput(format!(
                        "county '{}' has no grid units",
                        self.draws.labels.county_names[c]
                    )));
                }
                let mut acc = vec![0.0; m];
                let mut summ = vec![UnitSummary { presence: 0.0, biomass: 0.0 }; idx.len()];
                self.run(units, idx, |k, s, pr, v| {
                    acc[s] += v;
                    summ[k].presence += pr;
                    summ[k].biomass += v;
                })?;
                // per-draw sums were accumulated in a fixed unit order
                let k = idx.len() as f64;
                let post = CountyPosterior::from_draws(c, acc.into_iter().map(|s| s / k).collect())?;
                let units_out = idx
                    .iter()
                    .zip(summ)
                    .map(|(&i, s)| {
                        (i, UnitSummary { presence: s.presence / m as f64, biomass: s.biomass / m as f64 })
                    })
                    .collect();
                Ok((post, units_out))
            })
            .collect();
        let mut posts = Vec::with_capacity(counties.len());
        let mut summaries = Vec::new();
        for r in results {
            let (post, us) = r?;
            posts.push(post);
            summaries.extend(us);
        }
        Ok((posts, summaries))
    }
}

/// Predictive draws for a single unit.
pub fn posterior_predict_unit(
    draws: &PosteriorDraws,
    unit: &GridUnit,
    transform: TransformSpec,
    tau2_2: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let units = std::slice::from_ref(unit);
    let pred = Predictor::new(draws, units, transform, tau2_2, seed)?;
    Ok(pred.unit_draws(units, &[0])?.pop().expect("one unit"))
}

/// County table with columns county, estimate, sd, q025, q975, M.
pub fn write_county_csv(path: &Path, names: &[String], rows: &[CountyPosterior]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["county", "estimate", "sd", "q025", "q975", "M"]).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            names[r.county].clone(),
            format!("{:?}", r.mean),
            format!("{:?}", r.sd),
            format!("{:?}", r.q025),
            format!("{:?}", r.q975),
            r.draws.len().to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| SaeError::io(path.display().to_string(), e))
}

/// Unit table with columns x, y, county, presence, biomass.
pub fn write_unit_csv(path: &Path, names: &[String], units: &[GridUnit], summaries: &[UnitSummary]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| SaeError::io(path.display().to_string(), e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(["x", "y", "county", "presence", "biomass"]).map_err(|e| csv_err(path, e))?;
    for (u, s) in units.iter().zip(summaries) {
        w.write_record([
            format!("{:?}", u.x),
            format!("{:?}", u.y),
            names[u.county].clone(),
            format!("{:?}", s.presence),
            format!("{:?}", s.biomass),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    let mut inner = w.into_inner().map_err(|e| SaeError::io(path.display().to_string(), e.into_error()))?;
    inner.flush().map_err(|e| SaeError::io(path.display().to_string(), e))
}

fn csv_err(path: &Path, e: csv::Error) -> SaeError {
    SaeError::Parse { path: path.display().to_string(), row: 0, message: e.to_string() }
}
