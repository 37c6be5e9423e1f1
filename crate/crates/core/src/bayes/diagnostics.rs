use serde::{Deserialize, Serialize};

use crate::error::{Result, SaeError};

/// Split potential-scale-reduction factor.
///
/// Each chain is cut in half and the halves are treated as separate
/// sequences. Identical constant chains return 1.0.
pub fn psrf(chains: &[&[f64]]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(SaeError::InvalidInput("split R-hat needs at least 2 chains".into()));
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 10 {
        return Err(SaeError::InvalidInput("split R-hat needs at least 10 draws per chain".into()));
    }
    let half = n / 2;
    let mut seqs: Vec<&[f64]> = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let c = &c[c.len() - 2 * half..];
        seqs.push(&c[..half]);
        seqs.push(&c[half..]);
    }
    let m = seqs.len() as f64;
    let len = half as f64;
    let means: Vec<f64> = seqs.iter().map(|s| s.iter().sum::<f64>() / len).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = len / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let w = seqs
        .iter()
        .zip(&means)
        .map(|(s, mu)| s.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (len - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (len - 1.0) / len * w + b / len;
    Ok((var_plus / w).sqrt())
}

/// Cut a concatenated draw vector into per-chain slices.
pub fn split_chains<'a>(values: &'a [f64], chain_lengths: &[usize]) -> Vec<&'a [f64]> {
    let mut out = Vec::with_capacity(chain_lengths.len());
    let mut start = 0;
    for &l in chain_lengths {
        out.push(&values[start..start + l]);
        start += l;
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    /// Split R-hat per scalar parameter column.
    pub rhat: Vec<(String, f64)>,
    /// Post-burn-in acceptance rate per Metropolis-Hastings block.
    pub acceptance: Vec<(String, f64)>,
    pub threshold: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl ChainDiagnostics {
    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().map(|r| r.1).fold(1.0, f64::max)
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.rhat.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn iid_chains_are_converged() {
        let mut rng = rng_from_seed(9);
        let a: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let r = psrf(&[&a, &b]).unwrap();
        assert!(r < 1.01, "{r}");
        assert!(r > 0.99);
    }

    #[test]
    fn separated_chains_flagged() {
        let mut rng = rng_from_seed(10);
        let a: Vec<f64> = (0..1000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let b: Vec<f64> = (0..1000).map(|_| 5.0 + rng.sample::<f64, _>(StandardNormal)).collect();
        assert!(psrf(&[&a, &b]).unwrap() > 1.1);
    }

    #[test]
    fn constant_chains_by_convention() {
        let a = vec![2.0; 20];
        assert_eq!(psrf(&[&a, &a]).unwrap(), 1.0);
    }

    #[test]
    fn needs_two_chains_and_ten_draws() {
        let a = vec![1.0; 20];
        assert!(psrf(&[&a]).is_err());
        let short = vec![1.0; 5];
        assert!(psrf(&[&short, &short]).is_err());
    }

    #[test]
    fn split_detects_within_chain_drift() {
        let a: Vec<f64> = (0..200).map(|i| i as f64 / 10.0).collect();
        let b = a.clone();
        assert!(psrf(&[&a, &b]).unwrap() > 1.5);
    }
}
