//! Retained posterior draws, stored row-major (one row per retained iteration).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BernoulliState, GaussianModel, GaussianState};
use crate::data::ModelSpec;
use crate::error::{Result, SaeError};
use crate::nngp::SpatialParams;

/// Names used to label draw columns.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DrawLabels {
    pub x_names: Vec<String>,
    pub v_names: Vec<String>,
    pub county_names: Vec<String>,
}

/// Row-major matrix of draws with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawTable {
    names: Vec<String>,
    data: Vec<f64>,
}

impl DrawTable {
    pub fn new(names: Vec<String>, data: Vec<f64>) -> Result<Self> {
        if names.is_empty() || data.len() % names.len() != 0 {
            return Err(SaeError::Dimension(format!(
                "{} values do not fill rows of {} columns",
                data.len(),
                names.len()
            )));
        }
        Ok(DrawTable { names, data })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    pub fn nrows(&self) -> usize {
        self.data.len() / self.names.len()
    }

    pub fn row(&self, s: usize) -> &[f64] {
        let k = self.ncols();
        &self.data[s * k..(s + 1) * k]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.ncols()).copied().collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.names.iter().position(|n| n == name).map(|c| self.column(c))
    }
}

/// Column layout of the presence stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BernoulliLayout {
    pub q: usize,
    pub j: usize,
}

impl BernoulliLayout {
    pub fn width(&self) -> usize {
        self.q + self.j + 2
    }

    pub fn names(&self, labels: &DrawLabels) -> Vec<String> {
        let mut n = vec!["alpha0".to_string()];
        n.extend(labels.v_names.iter().map(|v| format!("alpha[{v}]")));
        n.extend(labels.county_names.iter().map(|c| format!("alpha_county[{c}]")));
        n.push("sigma2_alpha_county".into());
        n
    }

    pub fn write_row(&self, s: &BernoulliState, row: &mut Vec<f64>) {
        row.push(s.alpha0);
        row.extend_from_slice(&s.alpha);
        row.extend_from_slice(&s.county);
        row.push(s.sigma2);
    }

    pub fn read_row(&self, row: &[f64]) -> BernoulliState {
        let q = self.q;
        let j = self.j;
        BernoulliState {
            alpha0: row[0],
            alpha: row[1..1 + q].to_vec(),
            county: row[1 + q..1 + q + j].to_vec(),
            sigma2: row[1 + q + j],
        }
    }
}

/// Column layout of the continuous stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GaussianLayout {
    pub p: usize,
    pub j: usize,
    pub model: GaussianModel,
    pub n_sites: usize,
}

impl GaussianLayout {
    fn n_slopes(&self) -> usize {
        if self.model.cvc {
            self.j * self.p
        } else {
            0
        }
    }

    fn n_tau(&self) -> usize {
        if self.model.crv {
            self.j
        } else {
            1
        }
    }

    fn n_w(&self) -> usize {
        if self.model.svi {
            self.n_sites
        } else {
            0
        }
    }

    pub fn width(&self) -> usize {
        let cvc_var = if self.model.cvc { self.p } else { 0 };
        let sp = if self.model.svi { 2 } else { 0 };
        1 + self.p + self.j + self.n_slopes() + 1 + cvc_var + self.n_tau() + self.n_w() + sp
    }

    pub fn names(&self, labels: &DrawLabels) -> Vec<String> {
        let mut n = vec!["beta0".to_string()];
        n.extend(labels.x_names.iter().map(|x| format!("beta[{x}]")));
        n.extend(labels.county_names.iter().map(|c| format!("beta_county[{c}]")));
        if self.model.cvc {
            for c in &labels.county_names {
                n.extend(labels.x_names.iter().map(|x| format!("beta_slope[{c},{x}]")));
            }
        }
        n.push("sigma2_beta_county".into());
        if self.model.cvc {
            n.extend(labels.x_names.iter().map(|x| format!("sigma2_beta_slope[{x}]")));
        }
        if self.model.crv {
            n.extend(labels.county_names.iter().map(|c| format!("tau2[{c}]")));
        } else {
            n.push("tau2".into());
        }
        if self.model.svi {
            n.extend((0..self.n_sites).map(|i| format!("w[{i}]")));
            n.push("sigma2_w".into());
            n.push("phi".into());
        }
        n
    }

    pub fn write_row(&self, s: &GaussianState, row: &mut Vec<f64>) {
        row.push(s.beta0);
        row.extend_from_slice(&s.beta);
        row.extend_from_slice(&s.county_intercept);
        row.extend_from_slice(&s.county_slopes);
        row.push(s.sigma2_intercept);
        row.extend_from_slice(&s.sigma2_slopes);
        row.extend_from_slice(&s.tau2);
        row.extend_from_slice(&s.w);
        if let Some(sp) = s.spatial {
            row.push(sp.sigma2_w);
            row.push(sp.phi);
        }
    }

    pub fn read_row(&self, row: &[f64]) -> GaussianState {
        let mut at = 0;
        let mut take = |k: usize| {
            let v = row[at..at + k].to_vec();
            at += k;
            v
        };
        let beta0 = take(1)[0];
        let beta = take(self.p);
        let county_intercept = take(self.j);
        let county_slopes = take(self.n_slopes());
        let sigma2_intercept = take(1)[0];
        let sigma2_slopes = take(if self.model.cvc { self.p } else { 0 });
        let tau2 = take(self.n_tau());
        let w = take(self.n_w());
        let spatial = if self.model.svi {
            let v = take(2);
            Some(SpatialParams { sigma2_w: v[0], phi: v[1] })
        } else {
            None
        };
        GaussianState {
            beta0,
            beta,
            county_intercept,
            county_slopes,
            sigma2_intercept,
            sigma2_slopes,
            tau2,
            w,
            spatial,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliDraws {
    pub layout: BernoulliLayout,
    pub table: DrawTable,
}

impl BernoulliDraws {
    pub fn state(&self, s: usize) -> BernoulliState {
        self.layout.read_row(self.table.row(s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDraws {
    pub layout: GaussianLayout,
    pub table: DrawTable,
    /// Coordinates of the sites carrying `w`, in column order.
    pub sites: Vec<[f64; 2]>,
}

impl GaussianDraws {
    pub fn state(&self, s: usize) -> GaussianState {
        self.layout.read_row(self.table.row(s))
    }

    /// Offset of the first `w` column, if the model is spatial.
    pub fn w_offset(&self) -> Option<usize> {
        let l = &self.layout;
        l.model.svi.then(|| {
            let cvc_var = if l.model.cvc { l.p } else { 0 };
            1 + l.p + l.j + l.n_slopes() + 1 + cvc_var + l.n_tau()
        })
    }
}

/// Every retained draw of a fitted Bayesian model.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub spec: ModelSpec,
    pub labels: DrawLabels,
    pub chain_lengths: Vec<usize>,
    pub bernoulli: Option<BernoulliDraws>,
    pub gaussian: GaussianDraws,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.gaussian.table.nrows()
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut n = Vec::new();
        if let Some(b) = &self.bernoulli {
            n.extend(b.table.names().iter().cloned());
        }
        n.extend(self.gaussian.table.names().iter().cloned());
        n
    }

    /// Write all draws as one CSV: a `chain` column then every parameter.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header = vec!["chain".to_string()];
        header.extend(self.column_names());
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        let mut chain_of = Vec::with_capacity(self.n_draws());
        for (c, &l) in self.chain_lengths.iter().enumerate() {
            chain_of.extend(std::iter::repeat(c).take(l));
        }
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for s in 0..self.n_draws() {
            rec.clear();
            rec.push(chain_of[s].to_string());
            if let Some(b) = &self.bernoulli {
                rec.extend(b.table.row(s).iter().map(|v| format!("{v:?}")));
            }
            rec.extend(self.gaussian.table.row(s).iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| SaeError::io(path.display().to_string(), e))?;
        Ok(())
    }

    /// Read draws written by [`PosteriorDraws::write_csv`].
    pub fn read_csv(
        path: &Path,
        spec: ModelSpec,
        labels: DrawLabels,
        sites: Vec<[f64; 2]>,
    ) -> Result<Self> {
        let (blayout, glayout) = layouts(&spec, &labels, sites.len());
        let bnames = blayout.map(|l| l.names(&labels)).unwrap_or_default();
        let gnames = glayout.names(&labels);
        let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
        let expected: Vec<&str> =
            std::iter::once("chain").chain(bnames.iter().chain(&gnames).map(|s| s.as_str())).collect();
        let got: Vec<&str> = header.iter().collect();
        if got != expected {
            return Err(SaeError::Parse {
                path: path.display().to_string(),
                row: 1,
                message: "draw columns do not match the model specification".into(),
            });
        }
        let nb = bnames.len();
        let mut bdata = Vec::new();
        let mut gdata = Vec::new();
        let mut chain_lengths: Vec<usize> = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let row = r + 2;
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| SaeError::Parse {
                    path: path.display().to_string(),
                    row,
                    message: format!("non-numeric value '{s}'"),
                })
            };
            let chain: usize = rec[0].parse().map_err(|_| SaeError::Parse {
                path: path.display().to_string(),
                row,
                message: "bad chain index".into(),
            })?;
            if chain == chain_lengths.len() {
                chain_lengths.push(0);
            } else if chain + 1 != chain_lengths.len() {
                return Err(SaeError::Parse {
                    path: path.display().to_string(),
                    row,
                    message: "chain indices must be contiguous".into(),
                });
            }
            chain_lengths[chain] += 1;
            for (k, field) in rec.iter().skip(1).enumerate() {
                if k < nb {
                    bdata.push(parse(field)?);
                } else {
                    gdata.push(parse(field)?);
                }
            }
        }
        if chain_lengths.is_empty() {
            return Err(SaeError::NoRecords(path.display().to_string()));
        }
        let bernoulli = match blayout {
            Some(layout) => Some(BernoulliDraws { layout, table: DrawTable::new(bnames, bdata)? }),
            None => None,
        };
        Ok(PosteriorDraws {
            spec,
            labels,
            chain_lengths,
            bernoulli,
            gaussian: GaussianDraws { layout: glayout, table: DrawTable::new(gnames, gdata)?, sites },
        })
    }
}

fn csv_err(path: &Path, e: csv::Error) -> SaeError {
    SaeError::Parse { path: path.display().to_string(), row: 0, message: e.to_string() }
}

/// Column layouts implied by a model and its labels.
pub fn layouts(spec: &ModelSpec, labels: &DrawLabels, n_sites: usize) -> (Option<BernoulliLayout>, GaussianLayout) {
    let j = labels.county_names.len();
    let b = spec.two_stage().then_some(BernoulliLayout { q: labels.v_names.len(), j });
    let g = GaussianLayout {
        p: labels.x_names.len(),
        j,
        model: gaussian_model(spec),
        n_sites: if spec.spatial_intercept() { n_sites } else { 0 },
    };
    (b, g)
}

pub fn gaussian_model(spec: &ModelSpec) -> GaussianModel {
    GaussianModel {
        cvc: spec.varying_coefficients(),
        crv: spec.county_residual_variance(),
        svi: spec.spatial_intercept(),
        neighbors: spec.nngp_neighbors(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Estimator;

    fn labels() -> DrawLabels {
        DrawLabels {
            x_names: vec!["a".into(), "b".into()],
            v_names: vec!["c".into()],
            county_names: vec!["k1".into(), "k2".into(), "k3".into()],
        }
    }

    #[test]
    fn gaussian_row_round_trip() {
        let spec = Estimator::BZiCvcSviCrv.spec();
        let (_, g) = layouts(&spec, &labels(), 4);
        let st = GaussianState {
            beta0: 1.0,
            beta: vec![2.0, 3.0],
            county_intercept: vec![0.1, 0.2, 0.3],
            county_slopes: (0..6).map(|i| i as f64).collect(),
            sigma2_intercept: 0.5,
            sigma2_slopes: vec![0.6, 0.7],
            tau2: vec![1.0, 1.1, 1.2],
            w: vec![-1.0, 0.0, 1.0, 2.0],
            spatial: Some(SpatialParams { sigma2_w: 1.5, phi: 0.45 }),
        };
        let mut row = Vec::new();
        g.write_row(&st, &mut row);
        assert_eq!(row.len(), g.width());
        assert_eq!(g.names(&labels()).len(), g.width());
        assert_eq!(g.read_row(&row), st);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let spec = Estimator::BZiCviSviCrv.spec();
        let lab = labels();
        let sites = vec![[0.0, 0.0], [1.0, 2.0]];
        let (b, g) = layouts(&spec, &lab, sites.len());
        let b = b.unwrap();
        let bdata: Vec<f64> = (0..4 * b.width()).map(|i| (i as f64).sqrt()).collect();
        let gdata: Vec<f64> = (0..4 * g.width()).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let d = PosteriorDraws {
            spec,
            labels: lab.clone(),
            chain_lengths: vec![2, 2],
            bernoulli: Some(BernoulliDraws { layout: b, table: DrawTable::new(b.names(&lab), bdata).unwrap() }),
            gaussian: GaussianDraws {
                layout: g,
                table: DrawTable::new(g.names(&lab), gdata).unwrap(),
                sites: sites.clone(),
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("draws.csv");
        d.write_csv(&path).unwrap();
        let back = PosteriorDraws::read_csv(&path, spec, lab, sites).unwrap();
        assert_eq!(back, d);
    }
}
