//! The four commands. Each returns a [`Report`]; errors carry the exit class.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use zisae_core::bayes::{run_chains, DrawLabels, FitInput, McmcConfig, PosteriorDraws};
use zisae_core::data::{
    load_grid, load_plots, standardize_predictors, write_plots, ColumnSchema, CountyPolicy, CountyTable,
    ModelSpec, PlotRecord,
};
use zisae_core::freq::{bootstrap_mse, fit_two_stage, partial_county_means, predict_units, FreqFit};
use zisae_core::nngp::effective_range;
use zisae_core::predict::{quantile_type8, stable_sum, write_county_csv, write_unit_csv, Predictor, UnitSummary};
use zisae_core::rng::derive_seed;
use zisae_core::sim::{
    generate_population, kfold_cv, run_design, write_cv_csv, write_metrics_csv, Landscape, SimPopulation,
};
use zisae_core::{Result, SaeError};

use crate::archive::{csv_err, read_sites, write_sites, Manifest, FORMAT_VERSION};
use crate::config::{Command, RunConfig};

/// What a successful command did.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    /// False when any fitted model failed the convergence check.
    pub converged: bool,
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| SaeError::io(p.display().to_string(), e))
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn estimator_index(spec: &ModelSpec) -> u64 {
    zisae_core::data::Estimator::ALL.iter().position(|e| *e == spec.estimator()).unwrap_or(0) as u64
}

fn labels_of(schema: &ColumnSchema, counties: &CountyTable) -> DrawLabels {
    DrawLabels {
        x_names: schema.predictors_x.clone(),
        v_names: schema.predictors_v.clone(),
        county_names: counties.names().to_vec(),
    }
}

struct CsvOut {
    path: PathBuf,
    w: csv::Writer<std::fs::File>,
}

impl CsvOut {
    fn create(path: PathBuf, header: &[&str]) -> Result<Self> {
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        w.write_record(header).map_err(|e| csv_err(&path, e))?;
        Ok(CsvOut { path, w })
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> Result<()> {
        let rec: Vec<String> = fields.into_iter().collect();
        self.w.write_record(&rec).map_err(|e| csv_err(&self.path, e))
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.w.flush().map_err(|e| SaeError::io(self.path.display().to_string(), e))?;
        Ok(self.path)
    }
}

/// Fit every configured estimator and archive it under `<output_dir>/fit/<NAME>`.
pub fn cmd_fit(cfg: &RunConfig) -> Result<Report> {
    cfg.validate(Command::Fit)?;
    let seed = cfg.seed()?;
    let hash = cfg.hash()?;
    let transform = cfg.transform()?;
    let plots_path = &cfg.fit.as_ref().expect("validated").plots;
    let mut counties = CountyTable::new();
    let plots = load_plots(plots_path, &cfg.columns, &mut counties, CountyPolicy::Register)?;
    let (std_plots, stats) = standardize_predictors(&plots, None, &cfg.columns, &[])?;
    let labels = labels_of(&cfg.columns, &counties);
    let input = FitInput::from_records(&std_plots, transform, labels.clone())?;
    let mut report = Report { converged: true, ..Default::default() };

    for spec in cfg.specs()? {
        let name = spec.estimator().name();
        let dir = cfg.output_dir.join("fit").join(name);
        mkdir(&dir)?;
        let archive_schema = ColumnSchema {
            predictors_x: labels.x_names.clone(),
            predictors_v: labels.v_names.clone(),
            ..Default::default()
        };
        write_plots(&dir.join("plots.csv"), &plots, &archive_schema, &counties)?;
        let mut files = vec!["plots.csv".to_string(), "summary.csv".to_string()];
        let mut manifest = Manifest {
            format: FORMAT_VERSION,
            estimator: name.to_string(),
            nngp_neighbors: spec.nngp_neighbors(),
            transform_root: transform.root(),
            config_hash: hash.clone(),
            seed,
            converged: true,
            tau2_2: cfg.priors.tau2_2,
            x_names: labels.x_names.clone(),
            v_names: labels.v_names.clone(),
            county_names: labels.county_names.clone(),
            chain_lengths: Vec::new(),
            n_draws: 0,
            files: Vec::new(),
            standardization: stats.clone(),
        };
        let summary = dir.join("summary.csv");
        if spec.is_bayesian() {
            let mcmc = McmcConfig { seed: derive_seed(seed, &[0xF17, estimator_index(&spec)]), ..cfg.mcmc.clone() };
            let (draws, diag) = run_chains(&spec, &input, &cfg.priors, &mcmc)?;
            draws.write_csv(&dir.join("draws.csv"))?;
            files.push("draws.csv".into());
            if spec.spatial_intercept() {
                write_sites(&dir.join("sites.csv"), &draws.gaussian.sites)?;
                files.push("sites.csv".into());
            }
            write_bayes_summary(&summary, &draws)?;
            let mut d = CsvOut::create(dir.join("diagnostics.csv"), &["kind", "parameter", "value"])?;
            for (p, r) in &diag.rhat {
                d.row(["rhat".into(), p.clone(), fmt(*r)])?;
            }
            for (p, a) in &diag.acceptance {
                d.row(["acceptance".into(), p.clone(), fmt(*a)])?;
            }
            d.finish()?;
            files.push("diagnostics.csv".into());
            manifest.converged = diag.converged;
            manifest.chain_lengths = draws.chain_lengths.clone();
            manifest.n_draws = draws.n_draws();
            report.converged &= diag.converged;
            report.warnings.extend(diag.warnings.iter().map(|w| format!("{name}: {w}")));
            if !diag.converged {
                report.warnings.push(format!("{name}: max split R-hat {:.4} exceeds {}", diag.max_rhat(), diag.threshold));
            }
        } else {
            let fit = fit_two_stage(&input, transform)?;
            let json = serde_json::to_string_pretty(&fit).map_err(|e| SaeError::Numerical(e.to_string()))?;
            let path = dir.join("fit.json");
            std::fs::write(&path, json + "\n").map_err(|e| SaeError::io(path.display().to_string(), e))?;
            files.push("fit.json".into());
            write_freq_summary(&summary, &fit, &labels)?;
            report.warnings.extend(fit.glmm.warnings.iter().map(|w| format!("{name}: {w}")));
        }
        manifest.files = files;
        manifest.write(&dir)?;
        report.written.push(dir);
    }
    Ok(report)
}

fn write_bayes_summary(path: &Path, draws: &PosteriorDraws) -> Result<()> {
    let mut out = CsvOut::create(path.to_path_buf(), &["parameter", "mean", "q025", "q975"])?;
    let mut emit = |name: &str, mut v: Vec<f64>| -> Result<()> {
        let mean = stable_sum(&v) / v.len() as f64;
        v.sort_by(f64::total_cmp);
        out.row([name.to_string(), fmt(mean), fmt(quantile_type8(&v, 0.025)), fmt(quantile_type8(&v, 0.975))])
    };
    let tables = draws.bernoulli.as_ref().map(|b| &b.table).into_iter().chain(std::iter::once(&draws.gaussian.table));
    for table in tables {
        for (c, name) in table.names().iter().enumerate() {
            if name.starts_with("w[") {
                continue;
            }
            let col = table.column(c);
            emit(name, col.clone())?;
            if name == "phi" {
                emit("effective_range", col.iter().map(|&p| effective_range(p)).collect())?;
            }
        }
    }
    out.finish().map(|_| ())
}

fn write_freq_summary(path: &Path, fit: &FreqFit, labels: &DrawLabels) -> Result<()> {
    let mut out = CsvOut::create(path.to_path_buf(), &["parameter", "mean", "q025", "q975"])?;
    let mut emit = |name: String, v: f64| out.row([name, fmt(v), String::new(), String::new()]);
    emit("alpha0".into(), fit.glmm.alpha0)?;
    for (n, v) in labels.v_names.iter().zip(&fit.glmm.alpha) {
        emit(format!("alpha[{n}]"), *v)?;
    }
    for (n, v) in labels.county_names.iter().zip(&fit.glmm.modes) {
        emit(format!("alpha_county[{n}]"), *v)?;
    }
    emit("sigma2_alpha_county".into(), fit.glmm.sigma2_a)?;
    emit("beta0".into(), fit.lmm.beta0)?;
    for (n, v) in labels.x_names.iter().zip(&fit.lmm.beta) {
        emit(format!("beta[{n}]"), *v)?;
    }
    for (n, v) in labels.county_names.iter().zip(&fit.lmm.blups) {
        emit(format!("beta_county[{n}]"), *v)?;
    }
    emit("sigma2_beta_county".into(), fit.lmm.sigma2_b)?;
    emit("tau2".into(), fit.lmm.tau2)?;
    out.finish().map(|_| ())
}

/// Check that a grid file has every column an archive needs.
fn check_grid_columns(path: &Path, schema: &ColumnSchema) -> Result<()> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    let mut need = vec![schema.x.clone(), schema.y.clone(), schema.county.clone()];
    need.extend(schema.predictors_x.iter().cloned());
    need.extend(schema.predictors_v.iter().cloned());
    let missing: Vec<&String> = need.iter().filter(|c| !header.contains(c)).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(SaeError::Dimension(format!(
            "grid {} lacks columns {missing:?}; the model expects {need:?}",
            path.display()
        )))
    }
}

/// Predict county means (and optionally unit summaries) over the grid from
/// every configured estimator's archive.
pub fn cmd_predict(cfg: &RunConfig) -> Result<Report> {
    cfg.validate(Command::Predict)?;
    let seed = cfg.seed()?;
    let block = cfg.predict.as_ref().expect("validated");
    let mut report = Report { converged: true, ..Default::default() };
    for spec in cfg.specs()? {
        let name = spec.estimator().name();
        let adir = cfg.archive_root().join(name);
        let manifest = Manifest::read(&adir)?;
        let spec = manifest.spec()?;
        let transform = manifest.transform()?;
        let labels = manifest.labels();
        let schema = ColumnSchema {
            predictors_x: manifest.x_names.clone(),
            predictors_v: manifest.v_names.clone(),
            ..cfg.columns.clone()
        };
        check_grid_columns(&block.grid, &schema)?;
        let mut counties = CountyTable::from_names(manifest.county_names.iter().cloned());
        let grid = load_grid(&block.grid, &schema, &mut counties, CountyPolicy::ExistingOnly)?;
        let grid_std = manifest.standardization.apply(&grid)?;
        let mut present: Vec<usize> = grid.iter().map(|u| u.county).collect();
        present.sort_unstable();
        present.dedup();
        let batch = block.batch_counties.unwrap_or(present.len()).max(1);
        let out_dir = cfg.output_dir.join("predict").join(name);
        mkdir(&out_dir)?;
        let pred_seed = derive_seed(seed, &[0x9E, estimator_index(&spec)]);
        report.converged &= manifest.converged;
        if spec.is_bayesian() {
            let sites = if spec.spatial_intercept() { read_sites(&adir.join("sites.csv"))? } else { Vec::new() };
            let draws = PosteriorDraws::read_csv(&adir.join("draws.csv"), spec, labels.clone(), sites)?;
            let pred = Predictor::new(&draws, &grid_std, transform, manifest.tau2_2, pred_seed)?;
            let mut posts = Vec::new();
            let mut summaries = vec![UnitSummary { presence: 0.0, biomass: 0.0 }; grid.len()];
            for chunk in present.chunks(batch) {
                let (p, s) = pred.aggregate_counties(&grid_std, chunk)?;
                posts.extend(p);
                for (i, u) in s {
                    summaries[i] = u;
                }
            }
            let path = out_dir.join("county.csv");
            write_county_csv(&path, &labels.county_names, &posts)?;
            report.written.push(path);
            if block.units {
                let path = out_dir.join("units.csv");
                write_unit_csv(&path, &labels.county_names, &grid, &summaries)?;
                report.written.push(path);
            }
        } else {
            let text = std::fs::read_to_string(adir.join("fit.json"))
                .map_err(|e| SaeError::io(adir.join("fit.json").display().to_string(), e))?;
            let fit: FreqFit = serde_json::from_str(&text).map_err(|e| SaeError::Parse {
                path: adir.join("fit.json").display().to_string(),
                row: e.line(),
                message: e.to_string(),
            })?;
            let mut ct = CountyTable::from_names(manifest.county_names.iter().cloned());
            let plots = load_plots(&adir.join("plots.csv"), &manifest.plot_schema(), &mut ct, CountyPolicy::ExistingOnly)?;
            let design = FitInput::from_records(&manifest.standardization.apply(&plots)?, transform, labels.clone())?;
            let j = labels.county_names.len();
            let products: Vec<f64> = predict_units(&fit, &grid_std)?.iter().map(|u| u.product).collect();
            let cids: Vec<usize> = grid.iter().map(|u| u.county).collect();
            let est = partial_county_means(&products, &cids, j);
            let boot = bootstrap_mse(&fit, &design, &grid_std, cfg.bootstrap.b, pred_seed)?;
            let mut out = CsvOut::create(out_dir.join("county.csv"), &["county", "estimate", "rmse_hat", "lower", "upper", "B"])?;
            for &c in &present {
                let e = est[c].expect("county has grid units");
                let r = boot.rmse[c];
                out.row([
                    labels.county_names[c].clone(),
                    fmt(e),
                    fmt(r),
                    fmt(e - 1.96 * r),
                    fmt(e + 1.96 * r),
                    boot.replicates.to_string(),
                ])?;
            }
            report.written.push(out.finish()?);
            if boot.failures > 0 {
                report.warnings.push(format!("{name}: {} bootstrap refits failed", boot.failures));
            }
        }
    }
    Ok(report)
}

/// Read one text column by name from a CSV file.
fn read_column(path: &Path, column: &str) -> Result<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let k = header.iter().position(|h| h == column).ok_or_else(|| SaeError::Parse {
        path: path.display().to_string(),
        row: 1,
        message: format!("missing column '{column}'"),
    })?;
    r.records()
        .map(|rec| rec.map(|r| r.get(k).unwrap_or("").to_string()).map_err(|e| csv_err(path, e)))
        .collect()
}

struct SimInputs {
    pop: SimPopulation,
    sizes: Vec<usize>,
    labels: DrawLabels,
}

fn simulation_inputs(cfg: &RunConfig, seed: u64) -> Result<SimInputs> {
    let block = cfg.simulate.as_ref().expect("validated");
    let (pop, matched, labels) = if let Some(synth) = &block.synthetic {
        let land = synth.generate(derive_seed(seed, &[0x5E, 0]))?;
        let mut pop = generate_population(
            &land.pixels,
            &land.donors,
            block.k,
            &land.pixel_strata,
            &land.donor_strata,
            block.weights,
            synth.n_counties(),
            derive_seed(seed, &[0x5E, 1]),
        )?;
        Landscape::model_view(&mut pop);
        (pop, land.matched_sizes(), land.labels())
    } else {
        let donors_path = block.donors.as_ref().expect("validated");
        let pixels_path = block.pixels.as_ref().expect("validated");
        let mut counties = CountyTable::new();
        let donors = load_plots(donors_path, &cfg.columns, &mut counties, CountyPolicy::Register)?;
        let pixels = load_grid(pixels_path, &cfg.columns, &mut counties, CountyPolicy::Register)?;
        let (donor_strata, pixel_strata) = match &block.stratum_column {
            Some(col) => {
                let ds = read_column(donors_path, col)?;
                let ps = read_column(pixels_path, col)?;
                let mut ids: BTreeMap<String, usize> = BTreeMap::new();
                for s in ds.iter().chain(&ps) {
                    let n = ids.len();
                    ids.entry(s.clone()).or_insert(n);
                }
                (ds.iter().map(|s| ids[s]).collect(), ps.iter().map(|s| ids[s]).collect())
            }
            None => (vec![0; donors.len()], vec![0; pixels.len()]),
        };
        let pop = generate_population(
            &pixels,
            &donors,
            block.k,
            &pixel_strata,
            &donor_strata,
            block.weights,
            counties.len(),
            derive_seed(seed, &[0x5E, 1]),
        )?;
        let mut matched = vec![0; counties.len()];
        for d in &donors {
            matched[d.county] += 1;
        }
        (pop, matched, labels_of(&cfg.columns, &counties))
    };
    let sizes = match &block.sizes {
        Some(map) => {
            let mut s = vec![0; labels.county_names.len()];
            for (name, &n) in map {
                let c = labels
                    .county_names
                    .iter()
                    .position(|x| x == name)
                    .ok_or_else(|| SaeError::Config(format!("simulate.sizes names unknown county '{name}'")))?;
                s[c] = n;
            }
            s
        }
        None => matched,
    };
    Ok(SimInputs { pop, sizes, labels })
}

/// Run the repeated-sampling design and write county metrics and truths.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<Report> {
    cfg.validate(Command::Simulate)?;
    let seed = cfg.seed()?;
    let block = cfg.simulate.as_ref().expect("validated");
    let SimInputs { pop, sizes, labels } = simulation_inputs(cfg, seed)?;
    let specs = cfg.specs()?;
    let outcomes = run_design(&pop, &sizes, &specs, &labels, &cfg.settings()?, block.d, derive_seed(seed, &[0x5E, 2]))?;
    let dir = cfg.output_dir.join("simulate");
    mkdir(&dir)?;
    let mut report = Report { converged: true, warnings: pop.warnings.clone(), ..Default::default() };
    let metrics = dir.join("metrics.csv");
    write_metrics_csv(&metrics, &labels.county_names, &outcomes)?;
    report.written.push(metrics);
    let mut truth = CsvOut::create(dir.join("truth.csv"), &["county", "truth", "pixels", "sample_size"])?;
    let mut pixels = vec![0usize; labels.county_names.len()];
    for u in &pop.units {
        pixels[u.county] += 1;
    }
    for (c, name) in labels.county_names.iter().enumerate() {
        truth.row([name.clone(), fmt(pop.truth[c]), pixels[c].to_string(), sizes[c].to_string()])?;
    }
    report.written.push(truth.finish()?);
    let mut summary = CsvOut::create(dir.join("design.csv"), &["estimator", "replicates", "failures", "nonconverged"])?;
    for o in &outcomes {
        summary.row([o.name.clone(), block.d.to_string(), o.failures.to_string(), o.nonconverged.to_string()])?;
        report.warnings.extend(o.warnings.iter().map(|w| format!("{}: {w}", o.name)));
    }
    report.written.push(summary.finish()?);
    let bad: Vec<String> = outcomes
        .iter()
        .filter(|o| o.failures * 10 > block.d)
        .map(|o| format!("{} failed on {} of {} replicates", o.name, o.failures, block.d))
        .collect();
    if !bad.is_empty() {
        return Err(SaeError::Numerical(bad.join("; ")));
    }
    Ok(report)
}

/// K-fold cross-validation of every configured estimator.
pub fn cmd_cv(cfg: &RunConfig) -> Result<Report> {
    cfg.validate(Command::Cv)?;
    let seed = cfg.seed()?;
    let block = cfg.cv.as_ref().expect("validated");
    let mut counties = CountyTable::new();
    let plots: Vec<PlotRecord> = load_plots(&block.plots, &cfg.columns, &mut counties, CountyPolicy::Register)?;
    let labels = labels_of(&cfg.columns, &counties);
    let settings = cfg.settings()?;
    let dir = cfg.output_dir.join("cv");
    mkdir(&dir)?;
    let mut report = Report { converged: true, ..Default::default() };
    let mut rows = Vec::new();
    for spec in cfg.specs()? {
        let name = spec.estimator().name().to_string();
        let (metrics, preds) =
            kfold_cv(&plots, block.k, &spec, &labels, &settings, derive_seed(seed, &[0xC5, estimator_index(&spec)]))?;
        let mut out = CsvOut::create(dir.join(format!("predictions_{name}.csv")), &["id", "observed", "prediction", "lower", "upper"])?;
        for (r, p) in plots.iter().zip(&preds) {
            let (lo, hi) = p.interval.map(|(a, b)| (fmt(a), fmt(b))).unwrap_or_default();
            out.row([r.id.clone(), fmt(r.biomass), fmt(p.mean), lo, hi])?;
        }
        report.written.push(out.finish()?);
        rows.push((name, metrics));
    }
    let path = dir.join("cv.csv");
    write_cv_csv(&path, &rows)?;
    report.written.push(path);
    Ok(report)
}
