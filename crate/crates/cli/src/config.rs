//! Run configuration: a single TOML file with one block per command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use zisae_core::bayes::{McmcConfig, Priors};
use zisae_core::data::{ColumnSchema, Estimator, ModelSpec};
use zisae_core::estimator::EstimatorSettings;
use zisae_core::sim::{DonorWeights, SyntheticLandscape};
use zisae_core::transform::TransformSpec;
use zisae_core::{Result, SaeError};

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_root() -> u32 {
    2
}
fn default_estimators() -> Vec<String> {
    vec![Estimator::BZiCviSviCrv.name().to_string()]
}
fn default_neighbors() -> usize {
    zisae_core::data::DEFAULT_NEIGHBORS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; required here or via `--seed`.
    pub seed: Option<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Worker threads; all available cores when absent.
    pub workers: Option<usize>,
    #[serde(default = "default_root")]
    pub transform_root: u32,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<String>,
    #[serde(default = "default_neighbors")]
    pub nngp_neighbors: usize,
    #[serde(default)]
    pub columns: ColumnSchema,
    #[serde(default)]
    pub priors: Priors,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub bootstrap: BootstrapBlock,
    pub fit: Option<FitBlock>,
    pub predict: Option<PredictBlock>,
    pub simulate: Option<SimulateBlock>,
    pub cv: Option<CvBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapBlock {
    pub b: usize,
}

impl Default for BootstrapBlock {
    fn default() -> Self {
        BootstrapBlock { b: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitBlock {
    pub plots: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictBlock {
    pub grid: PathBuf,
    /// Directory holding one archive per estimator; `<output_dir>/fit` by default.
    pub archive: Option<PathBuf>,
    /// Also write per-unit summaries (Bayesian estimators).
    #[serde(default)]
    pub units: bool,
    /// Counties per prediction batch; all at once when absent.
    pub batch_counties: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    /// Donor plots in the plot layout.
    pub donors: Option<PathBuf>,
    /// Population pixels in the grid layout.
    pub pixels: Option<PathBuf>,
    /// Column holding the stratum label in both files; one stratum when absent.
    pub stratum_column: Option<String>,
    /// Built-in synthetic landscape instead of files.
    pub synthetic: Option<SyntheticLandscape>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default)]
    pub weights: DonorWeights,
    /// Per-county sample sizes; donor counts per county when absent.
    pub sizes: Option<BTreeMap<String, usize>>,
}

fn default_k() -> usize {
    5
}
fn default_d() -> usize {
    100
}
fn default_folds() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvBlock {
    pub plots: PathBuf,
    #[serde(default = "default_folds")]
    pub k: usize,
}

/// Which command a validation pass is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    Predict,
    Simulate,
    Cv,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SaeError::Config(e.to_string()))
    }

    /// Read a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SaeError::io(path.display().to_string(), e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(f) = &mut self.fit {
            fix(&mut f.plots);
        }
        if let Some(p) = &mut self.predict {
            fix(&mut p.grid);
            if let Some(a) = &mut p.archive {
                fix(a);
            }
        }
        if let Some(s) = &mut self.simulate {
            if let Some(d) = &mut s.donors {
                fix(d);
            }
            if let Some(px) = &mut s.pixels {
                fix(px);
            }
        }
        if let Some(c) = &mut self.cv {
            fix(&mut c.plots);
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| SaeError::Config("a master seed is required (config `seed` or --seed)".into()))
    }

    pub fn transform(&self) -> Result<TransformSpec> {
        TransformSpec::from_root(self.transform_root).map_err(|e| SaeError::Config(e.to_string()))
    }

    pub fn specs(&self) -> Result<Vec<ModelSpec>> {
        if self.estimators.is_empty() {
            return Err(SaeError::Config("at least one estimator is required".into()));
        }
        self.estimators
            .iter()
            .map(|name| {
                let e: Estimator = name.parse().map_err(|_| SaeError::Config(format!("unknown estimator '{name}'")))?;
                e.spec().with_neighbors(self.nngp_neighbors)
            })
            .collect()
    }

    pub fn settings(&self) -> Result<EstimatorSettings> {
        Ok(EstimatorSettings {
            transform: self.transform()?,
            priors: self.priors,
            mcmc: self.mcmc.clone(),
            bootstrap_b: self.bootstrap.b,
        })
    }

    pub fn archive_root(&self) -> PathBuf {
        self.predict
            .as_ref()
            .and_then(|p| p.archive.clone())
            .unwrap_or_else(|| self.output_dir.join("fit"))
    }

    /// Check everything the command needs before any work starts.
    pub fn validate(&self, command: Command) -> Result<()> {
        self.seed()?;
        self.transform()?;
        self.specs()?;
        self.priors.validate()?;
        self.mcmc.validate()?;
        if self.bootstrap.b < 2 {
            return Err(SaeError::Config("bootstrap.b must be >= 2".into()));
        }
        if self.workers == Some(0) {
            return Err(SaeError::Config("workers must be >= 1".into()));
        }
        let exists = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(SaeError::Config(format!("{what} '{}' does not exist", p.display())))
            }
        };
        match command {
            Command::Fit => {
                let f = self.fit.as_ref().ok_or_else(|| SaeError::Config("missing [fit] block".into()))?;
                exists(&f.plots, "fit.plots")?;
            }
            Command::Predict => {
                let p = self.predict.as_ref().ok_or_else(|| SaeError::Config("missing [predict] block".into()))?;
                exists(&p.grid, "predict.grid")?;
                exists(&self.archive_root(), "archive")?;
                if p.batch_counties == Some(0) {
                    return Err(SaeError::Config("predict.batch_counties must be >= 1".into()));
                }
            }
            Command::Simulate => {
                let s = self.simulate.as_ref().ok_or_else(|| SaeError::Config("missing [simulate] block".into()))?;
                match (&s.synthetic, &s.donors, &s.pixels) {
                    (Some(_), None, None) => {}
                    (None, Some(d), Some(p)) => {
                        exists(d, "simulate.donors")?;
                        exists(p, "simulate.pixels")?;
                    }
                    _ => {
                        return Err(SaeError::Config(
                            "simulate needs either [simulate.synthetic] or both donors and pixels".into(),
                        ))
                    }
                }
                if s.k == 0 {
                    return Err(SaeError::Config("simulate.k must be >= 1".into()));
                }
                if s.d < 2 {
                    return Err(SaeError::Config("simulate.d must be >= 2".into()));
                }
            }
            Command::Cv => {
                let c = self.cv.as_ref().ok_or_else(|| SaeError::Config("missing [cv] block".into()))?;
                exists(&c.plots, "cv.plots")?;
                if c.k < 2 {
                    return Err(SaeError::Config("cv.k must be >= 2".into()));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization, excluding the worker count.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.workers = None;
        let text = toml::to_string(&c).map_err(|e| SaeError::Config(e.to_string()))?;
        let digest = Sha256::digest(text.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
