//! Multi-chain drivers: burn-in, thinning, concatenation and diagnostics.

use rayon::prelude::*;

use super::draws::{gaussian_model, layouts, BernoulliLayout, DrawTable, GaussianLayout};
use super::{
    psrf, split_chains, BernoulliData, BernoulliDraws, BernoulliSampler, ChainDiagnostics,
    DrawLabels, GaussianData, GaussianDraws, GaussianModel, GaussianSampler, McmcConfig,
    PosteriorDraws, Priors,
};
use crate::data::{ModelSpec, PlotRecord};
use crate::error::{Result, SaeError};
use crate::rng::{derive_seed, rng_from_seed, SaeRng};
use crate::transform::TransformSpec;

const BERNOULLI_TAG: u64 = 0xB1;
const GAUSSIAN_TAG: u64 = 0x6A;

/// Model-ready arrays for one fit, built from (standardized) plot records.
#[derive(Debug, Clone)]
pub struct FitInput {
    pub z: Vec<u8>,
    /// Row-major `n x q`.
    pub v: Vec<f64>,
    pub q: usize,
    /// Transformed response for every row.
    pub y: Vec<f64>,
    /// Row-major `n x p`.
    pub x: Vec<f64>,
    pub p: usize,
    pub county: Vec<usize>,
    pub coords: Vec<[f64; 2]>,
    pub labels: DrawLabels,
}

impl FitInput {
    pub fn from_records(records: &[PlotRecord], transform: TransformSpec, labels: DrawLabels) -> Result<Self> {
        if records.is_empty() {
            return Err(SaeError::InvalidInput("no plot records to fit".into()));
        }
        let p = labels.x_names.len();
        let q = labels.v_names.len();
        let mut input = FitInput {
            z: Vec::with_capacity(records.len()),
            v: Vec::with_capacity(records.len() * q),
            q,
            y: Vec::with_capacity(records.len()),
            x: Vec::with_capacity(records.len() * p),
            p,
            county: Vec::with_capacity(records.len()),
            coords: Vec::with_capacity(records.len()),
            labels,
        };
        for r in records {
            if r.predictors_x.len() != p || r.predictors_v.len() != q {
                return Err(SaeError::Dimension(format!(
                    "record '{}' has {} x / {} v predictors, expected {p} / {q}",
                    r.id,
                    r.predictors_x.len(),
                    r.predictors_v.len()
                )));
            }
            if r.county >= input.labels.county_names.len() {
                return Err(SaeError::InvalidInput(format!("record '{}' has unregistered county", r.id)));
            }
            input.z.push(u8::from(r.present()));
            input.v.extend_from_slice(&r.predictors_v);
            input.y.push(transform.forward(r.biomass)?);
            input.x.extend_from_slice(&r.predictors_x);
            input.county.push(r.county);
            input.coords.push([r.x, r.y]);
        }
        Ok(input)
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn n_counties(&self) -> usize {
        self.labels.county_names.len()
    }

    /// Row indices entering the continuous stage.
    pub fn continuous_rows(&self, spec: &ModelSpec) -> Vec<usize> {
        if spec.two_stage() {
            (0..self.n()).filter(|&i| self.z[i] == 1).collect()
        } else {
            (0..self.n()).collect()
        }
    }
}

/// Concatenated draws of one stage plus its per-chain bookkeeping.
#[derive(Debug, Clone)]
pub struct StageRun<T> {
    pub draws: T,
    pub chain_lengths: Vec<usize>,
    pub acceptance: Vec<(String, f64)>,
}

trait Chain {
    fn sweep(&mut self, rng: &mut SaeRng) -> Result<()>;
    fn set_adapting(&mut self, on: bool);
    fn record(&self, row: &mut Vec<f64>);
    fn acceptance(&self) -> Vec<(String, f64)>;
}

struct BernoulliChain(BernoulliSampler, BernoulliLayout);
struct GaussianChain(GaussianSampler, GaussianLayout);

impl Chain for BernoulliChain {
    fn sweep(&mut self, rng: &mut SaeRng) -> Result<()> {
        self.0.sweep(rng)
    }
    fn set_adapting(&mut self, on: bool) {
        self.0.set_adapting(on)
    }
    fn record(&self, row: &mut Vec<f64>) {
        self.1.write_row(self.0.state(), row)
    }
    fn acceptance(&self) -> Vec<(String, f64)> {
        let (b, c) = self.0.acceptance();
        vec![("alpha_block".into(), b), ("alpha_county".into(), c)]
    }
}

impl Chain for GaussianChain {
    fn sweep(&mut self, rng: &mut SaeRng) -> Result<()> {
        self.0.sweep(rng)
    }
    fn set_adapting(&mut self, on: bool) {
        self.0.set_adapting(on)
    }
    fn record(&self, row: &mut Vec<f64>) {
        self.1.write_row(self.0.state(), row)
    }
    fn acceptance(&self) -> Vec<(String, f64)> {
        self.0.phi_acceptance().map(|a| vec![("phi".into(), a)]).unwrap_or_default()
    }
}

/// Run every chain of one stage; rows are concatenated in chain order.
fn run_stage<C, F>(config: &McmcConfig, tag: u64, make: F) -> Result<(Vec<f64>, Vec<usize>, Vec<(String, f64)>)>
where
    C: Chain,
    F: Fn(&mut SaeRng) -> Result<C> + Sync,
{
    config.validate()?;
    let per_chain = config.retained_per_chain();
    let outputs: Vec<Result<(Vec<f64>, Vec<(String, f64)>)>> = (0..config.chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from_seed(derive_seed(config.chain_seed(c), &[tag]));
            let mut chain = make(&mut rng)?;
            chain.set_adapting(true);
            for _ in 0..config.burn_in {
                chain.sweep(&mut rng)?;
            }
            chain.set_adapting(false);
            let mut rows = Vec::new();
            for it in 0..config.iterations - config.burn_in {
                chain.sweep(&mut rng)?;
                if (it + 1) % config.thin == 0 {
                    chain.record(&mut rows);
                }
            }
            Ok((rows, chain.acceptance()))
        })
        .collect();
    let mut data = Vec::new();
    let mut lengths = Vec::with_capacity(config.chains);
    let mut acc: Vec<(String, f64)> = Vec::new();
    for (c, out) in outputs.into_iter().enumerate() {
        let (rows, a) = out?;
        data.extend(rows);
        lengths.push(per_chain);
        for (name, v) in a {
            acc.push((format!("{name}[chain {c}]"), v));
        }
    }
    Ok((data, lengths, acc))
}

/// Fit the presence stage on all rows.
pub fn fit_bernoulli_stage(
    data: &BernoulliData,
    labels: &DrawLabels,
    priors: &Priors,
    config: &McmcConfig,
) -> Result<StageRun<BernoulliDraws>> {
    let layout = BernoulliLayout { q: data.q, j: data.n_counties };
    let (rows, chain_lengths, acceptance) = run_stage(config, BERNOULLI_TAG, |rng| {
        Ok(BernoulliChain(BernoulliSampler::new(data.clone(), *priors, rng)?, layout))
    })?;
    let table = DrawTable::new(layout.names(labels), rows)?;
    Ok(StageRun { draws: BernoulliDraws { layout, table }, chain_lengths, acceptance })
}

/// Fit the continuous stage on the supplied rows.
pub fn fit_gaussian_stage(
    data: &GaussianData,
    model: GaussianModel,
    labels: &DrawLabels,
    priors: &Priors,
    config: &McmcConfig,
) -> Result<StageRun<GaussianDraws>> {
    let layout = GaussianLayout {
        p: data.p,
        j: data.n_counties,
        model,
        n_sites: if model.svi { data.n() } else { 0 },
    };
    let (rows, chain_lengths, acceptance) = run_stage(config, GAUSSIAN_TAG, |rng| {
        Ok(GaussianChain(
            GaussianSampler::new(data.clone(), model, *priors, config.blocking, rng)?,
            layout,
        ))
    })?;
    let table = DrawTable::new(layout.names(labels), rows)?;
    let sites = if model.svi { data.coords.clone() } else { Vec::new() };
    Ok(StageRun { draws: GaussianDraws { layout, table, sites }, chain_lengths, acceptance })
}

/// Fit a Bayesian model: presence stage (two-stage models only) and
/// continuous stage, then split R-hat for every scalar column.
pub fn run_chains(
    spec: &ModelSpec,
    input: &FitInput,
    priors: &Priors,
    config: &McmcConfig,
) -> Result<(PosteriorDraws, ChainDiagnostics)> {
    if !spec.is_bayesian() {
        return Err(SaeError::Config(format!("{} is not a Bayesian estimator", spec.estimator())));
    }
    priors.validate()?;
    config.validate()?;
    let j = input.n_counties();
    let mut warnings = Vec::new();
    let mut acceptance = Vec::new();

    let bernoulli = if spec.two_stage() {
        let n1 = input.z.iter().filter(|&&z| z == 1).count();
        if n1 == 0 || n1 == input.n() {
            warnings.push("presence indicators are all one class; separation".to_string());
        }
        let bd = BernoulliData::new(input.z.clone(), input.v.clone(), input.q, input.county.clone(), j)?;
        let run = fit_bernoulli_stage(&bd, &input.labels, priors, config)?;
        acceptance.extend(run.acceptance);
        Some(run.draws)
    } else {
        None
    };

    let rows = input.continuous_rows(spec);
    if rows.is_empty() {
        return Err(SaeError::InvalidInput("continuous stage has no data".into()));
    }
    let p = input.p;
    let gd = GaussianData::new(
        rows.iter().map(|&i| input.y[i]).collect(),
        rows.iter().flat_map(|&i| input.x[i * p..(i + 1) * p].iter().copied()).collect(),
        p,
        rows.iter().map(|&i| input.county[i]).collect(),
        j,
        if spec.spatial_intercept() { rows.iter().map(|&i| input.coords[i]).collect() } else { Vec::new() },
    )?;
    let run = fit_gaussian_stage(&gd, gaussian_model(spec), &input.labels, priors, config)?;
    acceptance.extend(run.acceptance);
    debug_assert_eq!(layouts(spec, &input.labels, gd.n()).1, run.draws.layout);

    let draws = PosteriorDraws {
        spec: *spec,
        labels: input.labels.clone(),
        chain_lengths: run.chain_lengths,
        bernoulli,
        gaussian: run.draws,
    };
    let diagnostics = diagnose(&draws, config, acceptance, warnings)?;
    Ok((draws, diagnostics))
}

fn diagnose(
    draws: &PosteriorDraws,
    config: &McmcConfig,
    acceptance: Vec<(String, f64)>,
    mut warnings: Vec<String>,
) -> Result<ChainDiagnostics> {
    let mut rhat = Vec::new();
    let enough = draws.chain_lengths.len() >= 2 && draws.chain_lengths.iter().all(|&l| l >= 10);
    if enough {
        let tables = draws.bernoulli.iter().map(|b| &b.table).chain(std::iter::once(&draws.gaussian.table));
        for t in tables {
            for c in 0..t.ncols() {
                let col = t.column(c);
                let chains = split_chains(&col, &draws.chain_lengths);
                rhat.push((t.names()[c].clone(), psrf(&chains)?));
            }
        }
    } else {
        warnings.push("split R-hat needs at least 2 chains of 10 draws; not computed".into());
    }
    let mut d = ChainDiagnostics {
        rhat,
        acceptance,
        threshold: config.rhat_threshold,
        converged: true,
        warnings,
    };
    d.converged = d.rhat.iter().all(|(_, r)| *r <= config.rhat_threshold);
    if let Some((name, r)) = d.worst().filter(|_| !d.converged).cloned() {
        d.warnings.push(format!("split R-hat {r:.3} for {name} exceeds {}", config.rhat_threshold));
    }
    Ok(d)
}
