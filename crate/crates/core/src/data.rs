//! Plots, prediction grids, counties and estimator specifications, plus CSV
//! ingestion.
//!
//! Coordinates are planar kilometres. County labels in files are arbitrary
//! strings interned to dense indices `0..J` in order of first appearance.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SaeError};

#[derive(Debug, Clone, PartialEq)]
pub struct PlotRecord {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub county: usize,
    /// Mg/ha; exact zeros mark absence.
    pub biomass: f64,
    /// Predictors of the continuous stage.
    pub predictors_x: Vec<f64>,
    /// Predictors of the presence stage.
    pub predictors_v: Vec<f64>,
}

impl PlotRecord {
    pub fn present(&self) -> bool {
        self.biomass > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridUnit {
    pub x: f64,
    pub y: f64,
    pub county: usize,
    pub predictors_x: Vec<f64>,
    pub predictors_v: Vec<f64>,
}

/// Anything carrying both predictor vectors.
pub trait HasPredictors {
    fn predictors_x(&self) -> &[f64];
    fn predictors_v(&self) -> &[f64];
    fn predictors_x_mut(&mut self) -> &mut Vec<f64>;
    fn predictors_v_mut(&mut self) -> &mut Vec<f64>;
    fn county(&self) -> usize;
    fn coords(&self) -> [f64; 2];
}

macro_rules! impl_has_predictors {
    ($t:ty) => {
        impl HasPredictors for $t {
            fn predictors_x(&self) -> &[f64] {
                &self.predictors_x
            }
            fn predictors_v(&self) -> &[f64] {
                &self.predictors_v
            }
            fn predictors_x_mut(&mut self) -> &mut Vec<f64> {
                &mut self.predictors_x
            }
            fn predictors_v_mut(&mut self) -> &mut Vec<f64> {
                &mut self.predictors_v
            }
            fn county(&self) -> usize {
                self.county
            }
            fn coords(&self) -> [f64; 2] {
                [self.x, self.y]
            }
        }
    };
}

impl_has_predictors!(PlotRecord);
impl_has_predictors!(GridUnit);

impl From<&PlotRecord> for GridUnit {
    fn from(p: &PlotRecord) -> Self {
        GridUnit {
            x: p.x,
            y: p.y,
            county: p.county,
            predictors_x: p.predictors_x.clone(),
            predictors_v: p.predictors_v.clone(),
        }
    }
}

/// Dense county registry with per-county sample and grid sizes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CountyTable {
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    n_obs: Vec<usize>,
    n_grid: Vec<usize>,
}

impl CountyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut t = Self::new();
        for n in names {
            t.intern(&n.into());
        }
        t
    }

    /// Rebuild the name index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        self.n_obs.resize(self.names.len(), 0);
        self.n_grid.resize(self.names.len(), 0);
    }

    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        self.n_obs.push(0);
        self.n_grid.push(0);
        i
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, j: usize) -> &str {
        &self.names[j]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn n_obs(&self) -> &[usize] {
        &self.n_obs
    }

    pub fn n_grid(&self) -> &[usize] {
        &self.n_grid
    }

    pub fn set_observed_counts<T: HasPredictors>(&mut self, records: &[T]) {
        self.n_obs = counts_by_county(records, self.len());
    }

    pub fn set_grid_counts<T: HasPredictors>(&mut self, units: &[T]) {
        self.n_grid = counts_by_county(units, self.len());
    }

    /// Every registered county must own at least one grid unit.
    pub fn check_grid_coverage(&self) -> Result<()> {
        for (j, &n) in self.n_grid.iter().enumerate() {
            if n == 0 {
                return Err(SaeError::InvalidInput(format!(
                    "county '{}' has no prediction grid units",
                    self.names[j]
                )));
            }
        }
        Ok(())
    }
}

pub fn counts_by_county<T: HasPredictors>(items: &[T], n_counties: usize) -> Vec<usize> {
    let mut c = vec![0; n_counties];
    for it in items {
        c[it.county()] += 1;
    }
    c
}

/// The nine estimators, named after their model abbreviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "F_ZI_CVI")]
    FZiCvi,
    #[serde(rename = "B_CVI")]
    BCvi,
    #[serde(rename = "B_CVC")]
    BCvc,
    #[serde(rename = "B_ZI_CVI")]
    BZiCvi,
    #[serde(rename = "B_ZI_CVC")]
    BZiCvc,
    #[serde(rename = "B_ZI_CVI_CRV")]
    BZiCviCrv,
    #[serde(rename = "B_ZI_CVC_CRV")]
    BZiCvcCrv,
    #[serde(rename = "B_ZI_CVI_SVI_CRV")]
    BZiCviSviCrv,
    #[serde(rename = "B_ZI_CVC_SVI_CRV")]
    BZiCvcSviCrv,
}

impl Estimator {
    pub const ALL: [Estimator; 9] = [
        Estimator::FZiCvi,
        Estimator::BCvi,
        Estimator::BCvc,
        Estimator::BZiCvi,
        Estimator::BZiCvc,
        Estimator::BZiCviCrv,
        Estimator::BZiCvcCrv,
        Estimator::BZiCviSviCrv,
        Estimator::BZiCvcSviCrv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::FZiCvi => "F_ZI_CVI",
            Estimator::BCvi => "B_CVI",
            Estimator::BCvc => "B_CVC",
            Estimator::BZiCvi => "B_ZI_CVI",
            Estimator::BZiCvc => "B_ZI_CVC",
            Estimator::BZiCviCrv => "B_ZI_CVI_CRV",
            Estimator::BZiCvcCrv => "B_ZI_CVC_CRV",
            Estimator::BZiCviSviCrv => "B_ZI_CVI_SVI_CRV",
            Estimator::BZiCvcSviCrv => "B_ZI_CVC_SVI_CRV",
        }
    }

    pub fn spec(self) -> ModelSpec {
        use Paradigm::*;
        let (paradigm, zi, cvc, crv, svi) = match self {
            Estimator::FZiCvi => (Frequentist, true, false, false, false),
            Estimator::BCvi => (Bayesian, false, false, false, false),
            Estimator::BCvc => (Bayesian, false, true, false, false),
            Estimator::BZiCvi => (Bayesian, true, false, false, false),
            Estimator::BZiCvc => (Bayesian, true, true, false, false),
            Estimator::BZiCviCrv => (Bayesian, true, false, true, false),
            Estimator::BZiCvcCrv => (Bayesian, true, true, true, false),
            Estimator::BZiCviSviCrv => (Bayesian, true, false, true, true),
            Estimator::BZiCvcSviCrv => (Bayesian, true, true, true, true),
        };
        ModelSpec {
            paradigm,
            two_stage: zi,
            varying_coefficients: cvc,
            county_residual_variance: crv,
            spatial_intercept: svi,
            nngp_neighbors: if svi { DEFAULT_NEIGHBORS } else { 0 },
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = SaeError;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace(' ', "_").to_ascii_uppercase();
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == norm)
            .ok_or_else(|| SaeError::Config(format!("unknown estimator '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Paradigm {
    Frequentist,
    Bayesian,
}

pub const DEFAULT_NEIGHBORS: usize = 15;

/// Declarative model description; only the nine legal combinations construct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    paradigm: Paradigm,
    two_stage: bool,
    varying_coefficients: bool,
    county_residual_variance: bool,
    spatial_intercept: bool,
    nngp_neighbors: usize,
}

impl ModelSpec {
    pub fn new(
        paradigm: Paradigm,
        two_stage: bool,
        varying_coefficients: bool,
        county_residual_variance: bool,
        spatial_intercept: bool,
        nngp_neighbors: usize,
    ) -> Result<Self> {
        let candidate = ModelSpec {
            paradigm,
            two_stage,
            varying_coefficients,
            county_residual_variance,
            spatial_intercept,
            nngp_neighbors: if spatial_intercept { nngp_neighbors } else { 0 },
        };
        if spatial_intercept && nngp_neighbors == 0 {
            return Err(SaeError::Config("spatial models need at least one neighbor".into()));
        }
        let legal = Estimator::ALL.into_iter().any(|e| {
            let s = e.spec();
            s.paradigm == paradigm
                && s.two_stage == two_stage
                && s.varying_coefficients == varying_coefficients
                && s.county_residual_variance == county_residual_variance
                && s.spatial_intercept == spatial_intercept
        });
        if !legal {
            return Err(SaeError::Config(format!(
                "no estimator with paradigm={paradigm:?} ZI={two_stage} CVC={varying_coefficients} CRV={county_residual_variance} SVI={spatial_intercept}"
            )));
        }
        Ok(candidate)
    }

    pub fn with_neighbors(mut self, m: usize) -> Result<Self> {
        if self.spatial_intercept {
            if m == 0 {
                return Err(SaeError::Config("nngp neighbors must be >= 1".into()));
            }
            self.nngp_neighbors = m;
        }
        Ok(self)
    }

    pub fn estimator(&self) -> Estimator {
        Estimator::ALL
            .into_iter()
            .find(|e| {
                let s = e.spec();
                s.paradigm == self.paradigm
                    && s.two_stage == self.two_stage
                    && s.varying_coefficients == self.varying_coefficients
                    && s.county_residual_variance == self.county_residual_variance
                    && s.spatial_intercept == self.spatial_intercept
            })
            .expect("ModelSpec is always one of the nine estimators")
    }

    pub fn paradigm(&self) -> Paradigm {
        self.paradigm
    }
    pub fn is_bayesian(&self) -> bool {
        self.paradigm == Paradigm::Bayesian
    }
    pub fn two_stage(&self) -> bool {
        self.two_stage
    }
    pub fn varying_coefficients(&self) -> bool {
        self.varying_coefficients
    }
    pub fn county_residual_variance(&self) -> bool {
        self.county_residual_variance
    }
    pub fn spatial_intercept(&self) -> bool {
        self.spatial_intercept
    }
    pub fn nngp_neighbors(&self) -> usize {
        self.nngp_neighbors
    }
}

/// Column names used when reading plot and grid files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnSchema {
    pub id: String,
    pub x: String,
    pub y: String,
    pub county: String,
    pub biomass: String,
    pub predictors_x: Vec<String>,
    pub predictors_v: Vec<String>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        ColumnSchema {
            id: "id".into(),
            x: "x_km".into(),
            y: "y_km".into(),
            county: "county".into(),
            biomass: "biomass_mg_ha".into(),
            predictors_x: Vec::new(),
            predictors_v: Vec::new(),
        }
    }
}

impl ColumnSchema {
    pub fn with_predictors(x: &[&str], v: &[&str]) -> Self {
        ColumnSchema {
            predictors_x: x.iter().map(|s| s.to_string()).collect(),
            predictors_v: v.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }
}

/// Whether unseen county labels may be added while loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountyPolicy {
    Register,
    ExistingOnly,
}

struct HeaderMap {
    path: String,
    cols: HashMap<String, usize>,
}

impl HeaderMap {
    fn new(path: &str, headers: &csv::StringRecord) -> Self {
        HeaderMap {
            path: path.to_string(),
            cols: headers
                .iter()
                .enumerate()
                .map(|(i, h)| (h.trim().to_string(), i))
                .collect(),
        }
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.cols.get(name).copied().ok_or_else(|| SaeError::Parse {
            path: self.path.clone(),
            row: 1,
            message: format!("missing column '{name}'"),
        })
    }
}

fn numeric(path: &str, row: usize, rec: &csv::StringRecord, col: usize, name: &str) -> Result<f64> {
    let raw = rec.get(col).unwrap_or("").trim();
    if raw.is_empty() {
        return Err(SaeError::Parse {
            path: path.into(),
            row,
            message: format!("missing value in column '{name}'"),
        });
    }
    let v: f64 = raw.parse().map_err(|_| SaeError::Parse {
        path: path.into(),
        row,
        message: format!("non-numeric value '{raw}' in column '{name}'"),
    })?;
    if !v.is_finite() {
        return Err(SaeError::Parse {
            path: path.into(),
            row,
            message: format!("non-finite value '{raw}' in column '{name}'"),
        });
    }
    Ok(v)
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let p = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| SaeError::io(&p, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file))
}

fn csv_error(path: &str, e: csv::Error) -> SaeError {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    SaeError::Parse {
        path: path.into(),
        row,
        message: e.to_string(),
    }
}

fn county_index(
    counties: &mut CountyTable,
    policy: CountyPolicy,
    label: &str,
    path: &str,
    row: usize,
) -> Result<usize> {
    match policy {
        CountyPolicy::Register => Ok(counties.intern(label)),
        CountyPolicy::ExistingOnly => counties.get(label).ok_or_else(|| SaeError::Parse {
            path: path.into(),
            row,
            message: format!("unknown county '{label}'"),
        }),
    }
}

/// Read plot records. Row numbers in errors count the header as row 1.
pub fn load_plots(
    path: &Path,
    schema: &ColumnSchema,
    counties: &mut CountyTable,
    policy: CountyPolicy,
) -> Result<Vec<PlotRecord>> {
    let p = path.display().to_string();
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(&p, e))?.clone();
    let h = HeaderMap::new(&p, &headers);
    let c_id = h.require(&schema.id)?;
    let c_x = h.require(&schema.x)?;
    let c_y = h.require(&schema.y)?;
    let c_county = h.require(&schema.county)?;
    let c_bio = h.require(&schema.biomass)?;
    let c_px = schema.predictors_x.iter().map(|n| h.require(n)).collect::<Result<Vec<_>>>()?;
    let c_pv = schema.predictors_v.iter().map(|n| h.require(n)).collect::<Result<Vec<_>>>()?;

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| csv_error(&p, e))?;
        let id = rec.get(c_id).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(SaeError::Parse { path: p, row, message: "missing plot id".into() });
        }
        let x = numeric(&p, row, &rec, c_x, &schema.x)?;
        let y = numeric(&p, row, &rec, c_y, &schema.y)?;
        let biomass = numeric(&p, row, &rec, c_bio, &schema.biomass)?;
        if biomass < 0.0 {
            return Err(SaeError::Parse {
                path: p,
                row,
                message: format!("negative biomass {biomass}"),
            });
        }
        let label = rec.get(c_county).unwrap_or("").trim();
        if label.is_empty() {
            return Err(SaeError::Parse { path: p, row, message: "missing county".into() });
        }
        let county = county_index(counties, policy, label, &p, row)?;
        let predictors_x = c_px
            .iter()
            .zip(&schema.predictors_x)
            .map(|(&c, n)| numeric(&p, row, &rec, c, n))
            .collect::<Result<Vec<_>>>()?;
        let predictors_v = c_pv
            .iter()
            .zip(&schema.predictors_v)
            .map(|(&c, n)| numeric(&p, row, &rec, c, n))
            .collect::<Result<Vec<_>>>()?;
        out.push(PlotRecord { id, x, y, county, biomass, predictors_x, predictors_v });
    }
    if out.is_empty() {
        return Err(SaeError::NoRecords(p));
    }
    counties.set_observed_counts(&out);
    Ok(out)
}

/// Read prediction grid units (same layout as plots minus id and biomass).
pub fn load_grid(
    path: &Path,
    schema: &ColumnSchema,
    counties: &mut CountyTable,
    policy: CountyPolicy,
) -> Result<Vec<GridUnit>> {
    let p = path.display().to_string();
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(&p, e))?.clone();
    let h = HeaderMap::new(&p, &headers);
    let c_x = h.require(&schema.x)?;
    let c_y = h.require(&schema.y)?;
    let c_county = h.require(&schema.county)?;
    let c_px = schema.predictors_x.iter().map(|n| h.require(n)).collect::<Result<Vec<_>>>()?;
    let c_pv = schema.predictors_v.iter().map(|n| h.require(n)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| csv_error(&p, e))?;
        let x = numeric(&p, row, &rec, c_x, &schema.x)?;
        let y = numeric(&p, row, &rec, c_y, &schema.y)?;
        let label = rec.get(c_county).unwrap_or("").trim();
        let county = county_index(counties, policy, label, &p, row)?;
        let predictors_x = c_px
            .iter()
            .zip(&schema.predictors_x)
            .map(|(&c, n)| numeric(&p, row, &rec, c, n))
            .collect::<Result<Vec<_>>>()?;
        let predictors_v = c_pv
            .iter()
            .zip(&schema.predictors_v)
            .map(|(&c, n)| numeric(&p, row, &rec, c, n))
            .collect::<Result<Vec<_>>>()?;
        out.push(GridUnit { x, y, county, predictors_x, predictors_v });
    }
    if out.is_empty() {
        return Err(SaeError::NoRecords(p));
    }
    counties.set_grid_counts(&out);
    Ok(out)
}

/// Write plots in the layout [`load_plots`] reads. Values use Rust's shortest
/// round-trip float formatting, so a reload is bit-identical.
pub fn write_plots(
    path: &Path,
    records: &[PlotRecord],
    schema: &ColumnSchema,
    counties: &CountyTable,
) -> Result<()> {
    let p = path.display().to_string();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(&p, e))?;
    let mut header = vec![
        schema.id.clone(),
        schema.x.clone(),
        schema.y.clone(),
        schema.county.clone(),
        schema.biomass.clone(),
    ];
    header.extend(schema.predictors_x.iter().cloned());
    for v in &schema.predictors_v {
        if !schema.predictors_x.contains(v) {
            header.push(v.clone());
        }
    }
    w.write_record(&header).map_err(|e| csv_error(&p, e))?;
    for r in records {
        let mut row = vec![
            r.id.clone(),
            r.x.to_string(),
            r.y.to_string(),
            counties.name(r.county).to_string(),
            r.biomass.to_string(),
        ];
        row.extend(r.predictors_x.iter().map(|v| v.to_string()));
        for (k, name) in schema.predictors_v.iter().enumerate() {
            if !schema.predictors_x.contains(name) {
                row.push(r.predictors_v[k].to_string());
            }
        }
        w.write_record(&row).map_err(|e| csv_error(&p, e))?;
    }
    w.flush().map_err(|e| SaeError::io(&p, e))
}

/// Write grid units in the layout [`load_grid`] reads.
pub fn write_grid(
    path: &Path,
    units: &[GridUnit],
    schema: &ColumnSchema,
    counties: &CountyTable,
) -> Result<()> {
    let p = path.display().to_string();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(&p, e))?;
    let mut header = vec![schema.x.clone(), schema.y.clone(), schema.county.clone()];
    header.extend(schema.predictors_x.iter().cloned());
    for v in &schema.predictors_v {
        if !schema.predictors_x.contains(v) {
            header.push(v.clone());
        }
    }
    w.write_record(&header).map_err(|e| csv_error(&p, e))?;
    for u in units {
        let mut row = vec![u.x.to_string(), u.y.to_string(), counties.name(u.county).to_string()];
        row.extend(u.predictors_x.iter().map(|v| v.to_string()));
        for (k, name) in schema.predictors_v.iter().enumerate() {
            if !schema.predictors_x.contains(name) {
                row.push(u.predictors_v[k].to_string());
            }
        }
        w.write_record(&row).map_err(|e| csv_error(&p, e))?;
    }
    w.flush().map_err(|e| SaeError::io(&p, e))
}

/// Moments of one predictor column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub mean: f64,
    /// Sample standard deviation; 1 for columns declared constant.
    pub sd: f64,
    pub constant: bool,
}

impl ColumnStats {
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }
    pub fn invert(&self, s: f64) -> f64 {
        s * self.sd + self.mean
    }
}

/// Column moments for a row-major feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub columns: Vec<ColumnStats>,
}

impl Standardizer {
    /// Fit centering/scaling moments. A zero-variance column is an error
    /// unless its name appears in `constant_ok`.
    pub fn fit(rows: &[&[f64]], names: &[String], constant_ok: &[String]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(SaeError::InvalidInput(
                "standardization needs at least 2 records".into(),
            ));
        }
        let p = names.len();
        let n = rows.len() as f64;
        let mut columns = Vec::with_capacity(p);
        for (k, name) in names.iter().enumerate() {
            let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let sd = var.sqrt();
            let constant = !(sd > 1e-12 * mean.abs().max(1.0));
            if constant && !constant_ok.contains(name) {
                return Err(SaeError::InvalidInput(format!(
                    "predictor column '{name}' has zero variance"
                )));
            }
            columns.push(ColumnStats {
                name: name.clone(),
                mean,
                sd: if constant { 1.0 } else { sd },
                constant,
            });
        }
        Ok(Standardizer { columns })
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        for (v, c) in row.iter_mut().zip(&self.columns) {
            *v = c.apply(*v);
        }
    }

    pub fn invert_row(&self, row: &mut [f64]) {
        for (v, c) in row.iter_mut().zip(&self.columns) {
            *v = c.invert(*v);
        }
    }
}

/// Moments for both predictor sets of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizeStats {
    pub x: Standardizer,
    pub v: Standardizer,
}

impl StandardizeStats {
    pub fn apply<T: HasPredictors + Clone>(&self, items: &[T]) -> Result<Vec<T>> {
        let mut out = items.to_vec();
        for it in &mut out {
            if it.predictors_x().len() != self.x.columns.len()
                || it.predictors_v().len() != self.v.columns.len()
            {
                return Err(SaeError::Dimension(
                    "predictor count differs from the fitted standardization".into(),
                ));
            }
            self.x.apply_row(it.predictors_x_mut());
            self.v.apply_row(it.predictors_v_mut());
        }
        Ok(out)
    }

    pub fn invert<T: HasPredictors + Clone>(&self, items: &[T]) -> Vec<T> {
        let mut out = items.to_vec();
        for it in &mut out {
            self.x.invert_row(it.predictors_x_mut());
            self.v.invert_row(it.predictors_v_mut());
        }
        out
    }
}

/// Center and scale both predictor sets. With `stats` given, its stored
/// moments are reused; otherwise they are fitted on `records`.
pub fn standardize_predictors<T: HasPredictors + Clone>(
    records: &[T],
    stats: Option<&StandardizeStats>,
    schema: &ColumnSchema,
    constant_ok: &[String],
) -> Result<(Vec<T>, StandardizeStats)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => {
            let xr: Vec<&[f64]> = records.iter().map(|r| r.predictors_x()).collect();
            let vr: Vec<&[f64]> = records.iter().map(|r| r.predictors_v()).collect();
            StandardizeStats {
                x: Standardizer::fit(&xr, &schema.predictors_x, constant_ok)?,
                v: Standardizer::fit(&vr, &schema.predictors_v, constant_ok)?,
            }
        }
    };
    let out = stats.apply(records)?;
    Ok((out, stats))
}

/// Presence indicators z = 1{biomass > 0}.
#[derive(Debug, Clone, PartialEq)]
pub struct Presence {
    pub z: Vec<u8>,
}

impl Presence {
    pub fn n_present(&self) -> usize {
        self.z.iter().filter(|&&v| v == 1).count()
    }

    /// Warning text when the continuous stage would receive no rows.
    pub fn warning(&self) -> Option<&'static str> {
        if self.n_present() == 0 {
            Some("continuous stage has no data")
        } else {
            None
        }
    }
}

pub fn derive_presence(records: &[PlotRecord]) -> Presence {
    Presence {
        z: records.iter().map(|r| u8::from(r.biomass > 0.0)).collect(),
    }
}
