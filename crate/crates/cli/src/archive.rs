//! Fitted-model archive: a directory with `manifest.toml`, the raw plots the
//! model was fitted on, and either `draws.csv` (+ `sites.csv` for spatial
//! models) or `fit.json` for the frequentist estimator.

use std::path::Path;

use serde::{Deserialize, Serialize};

use zisae_core::bayes::DrawLabels;
use zisae_core::data::{ColumnSchema, Estimator, ModelSpec, StandardizeStats};
use zisae_core::transform::TransformSpec;
use zisae_core::{Result, SaeError};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: u32,
    pub estimator: String,
    pub nngp_neighbors: usize,
    pub transform_root: u32,
    pub config_hash: String,
    pub seed: u64,
    pub converged: bool,
    pub tau2_2: f64,
    pub x_names: Vec<String>,
    pub v_names: Vec<String>,
    pub county_names: Vec<String>,
    pub chain_lengths: Vec<usize>,
    pub n_draws: usize,
    pub files: Vec<String>,
    pub standardization: StandardizeStats,
}

impl Manifest {
    pub fn spec(&self) -> Result<ModelSpec> {
        let e: Estimator = self
            .estimator
            .parse()
            .map_err(|_| SaeError::InvalidInput(format!("archive names unknown estimator '{}'", self.estimator)))?;
        e.spec().with_neighbors(self.nngp_neighbors)
    }

    pub fn transform(&self) -> Result<TransformSpec> {
        TransformSpec::from_root(self.transform_root)
    }

    pub fn labels(&self) -> DrawLabels {
        DrawLabels {
            x_names: self.x_names.clone(),
            v_names: self.v_names.clone(),
            county_names: self.county_names.clone(),
        }
    }

    /// Column layout of the archived plots file.
    pub fn plot_schema(&self) -> ColumnSchema {
        ColumnSchema { predictors_x: self.x_names.clone(), predictors_v: self.v_names.clone(), ..Default::default() }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| SaeError::InvalidInput(e.to_string()))?;
        let path = dir.join("manifest.toml");
        std::fs::write(&path, text).map_err(|e| SaeError::io(path.display().to_string(), e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.toml");
        let text = std::fs::read_to_string(&path).map_err(|e| SaeError::io(path.display().to_string(), e))?;
        let m: Manifest = toml::from_str(&text).map_err(|e| SaeError::Parse {
            path: path.display().to_string(),
            row: 0,
            message: e.to_string(),
        })?;
        if m.format != FORMAT_VERSION {
            return Err(SaeError::InvalidInput(format!("unsupported archive format {}", m.format)));
        }
        Ok(m)
    }
}

pub fn write_sites(path: &Path, sites: &[[f64; 2]]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["site", "x", "y"]).map_err(|e| csv_err(path, e))?;
    for (i, s) in sites.iter().enumerate() {
        w.write_record([i.to_string(), format!("{:?}", s[0]), format!("{:?}", s[1])]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| SaeError::io(path.display().to_string(), e))
}

pub fn read_sites(path: &Path) -> Result<Vec<[f64; 2]>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let num = |k: usize| -> Result<f64> {
            rec.get(k).and_then(|s| s.parse().ok()).ok_or_else(|| SaeError::Parse {
                path: path.display().to_string(),
                row: i + 2,
                message: "bad site coordinate".into(),
            })
        };
        out.push([num(1)?, num(2)?]);
    }
    Ok(out)
}

pub fn csv_err(path: &Path, e: csv::Error) -> SaeError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => SaeError::io(path.display().to_string(), io),
        other => SaeError::Parse { path: path.display().to_string(), row: 0, message: format!("{other:?}") },
    }
}
