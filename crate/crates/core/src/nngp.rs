//! Nearest-Neighbor Gaussian Process machinery for a latent spatial intercept.
//!
//! Sites are ordered by x then y. Each site conditions on at most `m`
//! previously ordered nearest sites, which turns the exponential-covariance
//! Gaussian density into a product of univariate conditionals
//! `w_i | w_N(i) ~ N(b_i' w_N(i), f_i)`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SaeError};
use crate::linalg::{small_cholesky_in_place, small_cholesky_solve};

/// Relative diagonal jitter added to neighbor covariances.
pub const JITTER: f64 = 1e-10;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Distance (km) at which exponential correlation falls to 0.05.
pub fn effective_range(phi: f64) -> f64 {
    -(0.05f64.ln()) / phi
}

pub fn phi_from_effective_range(range_km: f64) -> f64 {
    -(0.05f64.ln()) / range_km
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialParams {
    pub sigma2_w: f64,
    /// Exponential decay, 1/km.
    pub phi: f64,
}

impl SpatialParams {
    pub fn new(sigma2_w: f64, phi: f64) -> Result<Self> {
        if !(sigma2_w > 0.0) || !(phi > 0.0) {
            return Err(SaeError::Domain(format!(
                "spatial parameters must be positive (sigma2_w={sigma2_w}, phi={phi})"
            )));
        }
        Ok(SpatialParams { sigma2_w, phi })
    }

    pub fn covariance(&self, d: f64) -> f64 {
        self.sigma2_w * (-self.phi * d).exp()
    }
}

/// Uniform prior support for the decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiPrior {
    pub lower: f64,
    pub upper: f64,
}

impl Default for PhiPrior {
    fn default() -> Self {
        PhiPrior { lower: 0.003, upper: 3.0 }
    }
}

impl PhiPrior {
    pub fn contains(&self, phi: f64) -> bool {
        phi >= self.lower && phi <= self.upper
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

#[derive(PartialEq)]
struct Candidate {
    d2: f64,
    idx: usize,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.idx.cmp(&other.idx))
    }
}

/// Keep the `k` smallest candidates in a max-heap.
fn push_bounded(heap: &mut BinaryHeap<Candidate>, k: usize, c: Candidate) {
    if heap.len() < k {
        heap.push(c);
    } else if let Some(top) = heap.peek() {
        if c < *top {
            heap.pop();
            heap.push(c);
        }
    }
}

fn heap_sorted(heap: BinaryHeap<Candidate>) -> Vec<Candidate> {
    let mut v = heap.into_vec();
    v.sort();
    v
}

/// Ordered neighbor structure underlying the NNGP factorization.
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    m: usize,
    /// position -> original site index
    order: Vec<usize>,
    /// original site index -> position
    position: Vec<usize>,
    /// coordinates by position
    coords: Vec<[f64; 2]>,
    /// neighbor positions (all earlier) per position, nearest first
    neighbors: Vec<Vec<usize>>,
    /// distance from each position to each of its neighbors
    nn_dist: Vec<Vec<f64>>,
    /// row-major distances among each neighbor set
    nn_pair_dist: Vec<Vec<f64>>,
    /// for each position, the (child position, slot) pairs that condition on it
    children: Vec<Vec<(usize, usize)>>,
}

impl NeighborGraph {
    pub fn build(coords: &[[f64; 2]], m: usize) -> Result<Self> {
        build_graph(coords, m)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Site index at ordered position `i`.
    pub fn site_at(&self, i: usize) -> usize {
        self.order[i]
    }

    pub fn position_of(&self, site: usize) -> usize {
        self.position[site]
    }

    pub fn ordering(&self) -> &[usize] {
        &self.order
    }

    /// Neighbor positions of ordered position `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Neighbors of ordered position `i` as original site indices.
    pub fn neighbor_sites(&self, i: usize) -> Vec<usize> {
        self.neighbors[i].iter().map(|&p| self.order[p]).collect()
    }

    pub fn children(&self, i: usize) -> &[(usize, usize)] {
        &self.children[i]
    }

    pub fn coords_at(&self, i: usize) -> [f64; 2] {
        self.coords[i]
    }

    /// Largest pairwise distance between any two sites (bounding-box diagonal).
    pub fn extent(&self) -> f64 {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for c in &self.coords {
            x0 = x0.min(c[0]);
            x1 = x1.max(c[0]);
            y0 = y0.min(c[1]);
            y1 = y1.max(c[1]);
        }
        ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt()
    }
}

/// Order sites by (x, y) and attach up to `m` nearest predecessors to each.
pub fn build_graph(coords: &[[f64; 2]], m: usize) -> Result<NeighborGraph> {
    if coords.is_empty() {
        return Err(SaeError::InvalidInput("neighbor graph needs at least one site".into()));
    }
    if m == 0 {
        return Err(SaeError::InvalidInput("neighbor count m must be >= 1".into()));
    }
    if coords.iter().any(|c| !c[0].is_finite() || !c[1].is_finite()) {
        return Err(SaeError::InvalidInput("non-finite site coordinate".into()));
    }
    let n = coords.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        coords[a][0]
            .total_cmp(&coords[b][0])
            .then(coords[a][1].total_cmp(&coords[b][1]))
            .then(a.cmp(&b))
    });
    let mut position = vec![0; n];
    for (p, &s) in order.iter().enumerate() {
        position[s] = p;
    }
    let sorted: Vec<[f64; 2]> = order.iter().map(|&s| coords[s]).collect();

    let mut neighbors = Vec::with_capacity(n);
    let mut nn_dist = Vec::with_capacity(n);
    let mut nn_pair_dist = Vec::with_capacity(n);
    for i in 0..n {
        let k = m.min(i);
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            // sites are sorted by x, so scanning backwards can stop once the
            // x-gap alone exceeds the current k-th best distance
            for j in (0..i).rev() {
                let dx = sorted[i][0] - sorted[j][0];
                if heap.len() == k {
                    if let Some(top) = heap.peek() {
                        if dx * dx > top.d2 {
                            break;
                        }
                    }
                }
                let dy = sorted[i][1] - sorted[j][1];
                push_bounded(&mut heap, k, Candidate { d2: dx * dx + dy * dy, idx: j });
            }
        }
        let found = heap_sorted(heap);
        let ids: Vec<usize> = found.iter().map(|c| c.idx).collect();
        let d: Vec<f64> = found.iter().map(|c| c.d2.sqrt()).collect();
        let mut pd = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..a {
                let v = dist(sorted[ids[a]], sorted[ids[b]]);
                pd[a * k + b] = v;
                pd[b * k + a] = v;
            }
        }
        neighbors.push(ids);
        nn_dist.push(d);
        nn_pair_dist.push(pd);
    }
    let mut children = vec![Vec::new(); n];
    for (i, nb) in neighbors.iter().enumerate() {
        for (slot, &p) in nb.iter().enumerate() {
            children[p].push((i, slot));
        }
    }
    Ok(NeighborGraph {
        m,
        order,
        position,
        coords: sorted,
        neighbors,
        nn_dist,
        nn_pair_dist,
        children,
    })
}

/// Conditional coefficients and variances on the correlation scale; the
/// covariance-scale variances are `sigma2_w * f`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationFactors {
    pub phi: f64,
    pub b: Vec<Vec<f64>>,
    pub f: Vec<f64>,
}

/// Per-site coefficients `b_i` and conditional variances `f_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalFactors {
    pub b: Vec<Vec<f64>>,
    pub f: Vec<f64>,
}

/// Solve for kriging weights of one site given its neighbor distances.
/// Returns the correlation-scale conditional variance.
fn conditional_weights(
    phi: f64,
    k: usize,
    to_site: &[f64],
    pair: &[f64],
    work: &mut Vec<f64>,
    b: &mut Vec<f64>,
) -> Result<f64> {
    b.clear();
    if k == 0 {
        return Ok(1.0);
    }
    work.clear();
    work.resize(k * k, 0.0);
    for a in 0..k {
        work[a * k + a] = 1.0 + JITTER;
        for c in 0..a {
            let v = (-phi * pair[a * k + c]).exp();
            work[a * k + c] = v;
            work[c * k + a] = v;
        }
    }
    if !small_cholesky_in_place(work, k) {
        return Err(SaeError::Numerical(
            "singular neighbor covariance after jitter".into(),
        ));
    }
    b.extend(to_site.iter().map(|&d| (-phi * d).exp()));
    let c: Vec<f64> = b.clone();
    small_cholesky_solve(work, k, b);
    let dot: f64 = b.iter().zip(&c).map(|(x, y)| x * y).sum();
    // the jittered diagonal keeps the variance strictly positive
    Ok((1.0 + JITTER - dot).max(JITTER))
}

pub fn factorize_correlation(graph: &NeighborGraph, phi: f64) -> Result<CorrelationFactors> {
    if !(phi > 0.0) {
        return Err(SaeError::Domain(format!("phi must be positive, got {phi}")));
    }
    let n = graph.len();
    let mut b = Vec::with_capacity(n);
    let mut f = Vec::with_capacity(n);
    let mut work = Vec::new();
    for i in 0..n {
        let mut bi = Vec::with_capacity(graph.neighbors[i].len());
        let fi = if i == 0 {
            1.0
        } else {
            conditional_weights(
                phi,
                graph.neighbors[i].len(),
                &graph.nn_dist[i],
                &graph.nn_pair_dist[i],
                &mut work,
                &mut bi,
            )?
        };
        b.push(bi);
        f.push(fi);
    }
    Ok(CorrelationFactors { phi, b, f })
}

/// `b_i = C_{i,N} C_{N,N}^{-1}`, `f_i = C_ii - b_i C_{N,i}` under
/// `C(d) = sigma2_w exp(-phi d)`.
pub fn factorize(graph: &NeighborGraph, params: &SpatialParams) -> Result<ConditionalFactors> {
    let corr = factorize_correlation(graph, params.phi)?;
    Ok(ConditionalFactors {
        b: corr.b,
        f: corr.f.iter().map(|v| v * params.sigma2_w).collect(),
    })
}

/// Residual of ordered position `i`: `w_i - b_i' w_N(i)`, with `w` by position.
fn conditional_residual(graph: &NeighborGraph, b: &[Vec<f64>], w_pos: &[f64], i: usize) -> f64 {
    let mut mu = 0.0;
    for (slot, &p) in graph.neighbors[i].iter().enumerate() {
        mu += b[i][slot] * w_pos[p];
    }
    w_pos[i] - mu
}

fn to_positions(graph: &NeighborGraph, w_sites: &[f64]) -> Vec<f64> {
    graph.order.iter().map(|&s| w_sites[s]).collect()
}

/// `sum_i (w_i - b_i' w_N(i))^2 / f_i` on the correlation scale.
pub fn quadratic_form(graph: &NeighborGraph, corr: &CorrelationFactors, w_sites: &[f64]) -> f64 {
    let w = to_positions(graph, w_sites);
    (0..graph.len())
        .map(|i| {
            let r = conditional_residual(graph, &corr.b, &w, i);
            r * r / corr.f[i]
        })
        .sum()
}

/// Log-density of `w` (indexed by original site) under the NNGP.
pub fn log_density(w: &[f64], factors: &ConditionalFactors, graph: &NeighborGraph) -> Result<f64> {
    if w.len() != graph.len() || factors.f.len() != graph.len() {
        return Err(SaeError::Dimension(format!(
            "w has {} entries, graph has {} sites, factors have {}",
            w.len(),
            graph.len(),
            factors.f.len()
        )));
    }
    let wp = to_positions(graph, w);
    let mut acc = 0.0;
    for i in 0..graph.len() {
        let r = conditional_residual(graph, &factors.b, &wp, i);
        acc += -0.5 * (LN_2PI + factors.f[i].ln() + r * r / factors.f[i]);
    }
    Ok(acc)
}

/// Log-density using correlation-scale factors and a separate variance.
pub fn log_density_scaled(
    graph: &NeighborGraph,
    corr: &CorrelationFactors,
    sigma2_w: f64,
    w_sites: &[f64],
) -> f64 {
    let q = quadratic_form(graph, corr, w_sites);
    let log_det: f64 = corr.f.iter().map(|f| (f * sigma2_w).ln()).sum();
    -0.5 * (graph.len() as f64 * LN_2PI + log_det + q / sigma2_w)
}

/// Outcome of one Metropolis-Hastings update of the decay.
#[derive(Debug, Clone)]
pub struct PhiUpdate {
    pub params: SpatialParams,
    pub accepted: bool,
    pub factors: CorrelationFactors,
}

/// Random-walk MH on log(phi) targeting p(phi | w, sigma2_w) under a uniform
/// prior. Proposals outside the prior support are rejected.
#[allow(clippy::too_many_arguments)]
pub fn sample_phi_mh<R: Rng + ?Sized>(
    current: &SpatialParams,
    current_factors: Option<&CorrelationFactors>,
    w: &[f64],
    graph: &NeighborGraph,
    prior: &PhiPrior,
    proposal_sd: f64,
    rng: &mut R,
) -> Result<PhiUpdate> {
    let cur_f = match current_factors {
        Some(f) if f.phi == current.phi => f.clone(),
        _ => factorize_correlation(graph, current.phi)?,
    };
    let eps: f64 = rng.sample(StandardNormal);
    let u: f64 = rng.gen();
    let proposed_phi = current.phi * (proposal_sd * eps).exp();
    if !prior.contains(proposed_phi) {
        return Ok(PhiUpdate { params: *current, accepted: false, factors: cur_f });
    }
    if proposed_phi == current.phi {
        return Ok(PhiUpdate { params: *current, accepted: true, factors: cur_f });
    }
    let prop_f = factorize_correlation(graph, proposed_phi)?;
    let lp_cur = log_density_scaled(graph, &cur_f, current.sigma2_w, w) + current.phi.ln();
    let lp_prop = log_density_scaled(graph, &prop_f, current.sigma2_w, w) + proposed_phi.ln();
    if u.ln() < lp_prop - lp_cur {
        Ok(PhiUpdate {
            params: SpatialParams { sigma2_w: current.sigma2_w, phi: proposed_phi },
            accepted: true,
            factors: prop_f,
        })
    } else {
        Ok(PhiUpdate { params: *current, accepted: false, factors: cur_f })
    }
}

/// k nearest reference points for each query, nearest first; ties by index.
pub fn nearest_references(queries: &[[f64; 2]], refs: &[[f64; 2]], k: usize) -> Vec<Vec<usize>> {
    let k = k.min(refs.len());
    let mut by_x: Vec<usize> = (0..refs.len()).collect();
    by_x.sort_by(|&a, &b| refs[a][0].total_cmp(&refs[b][0]).then(a.cmp(&b)));
    let xs: Vec<f64> = by_x.iter().map(|&i| refs[i][0]).collect();
    queries
        .iter()
        .map(|q| {
            let start = xs.partition_point(|&x| x < q[0]);
            let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
            let (mut lo, mut hi) = (start, start);
            loop {
                let bound = if heap.len() == k { heap.peek().map(|c| c.d2) } else { None };
                let left_ok = lo > 0 && bound.map_or(true, |b| (q[0] - xs[lo - 1]).powi(2) <= b);
                let right_ok = hi < xs.len() && bound.map_or(true, |b| (xs[hi] - q[0]).powi(2) <= b);
                if !left_ok && !right_ok {
                    break;
                }
                if left_ok {
                    lo -= 1;
                    let r = by_x[lo];
                    let d2 = (refs[r][0] - q[0]).powi(2) + (refs[r][1] - q[1]).powi(2);
                    push_bounded(&mut heap, k, Candidate { d2, idx: r });
                }
                if right_ok {
                    let r = by_x[hi];
                    hi += 1;
                    let d2 = (refs[r][0] - q[0]).powi(2) + (refs[r][1] - q[1]).powi(2);
                    push_bounded(&mut heap, k, Candidate { d2, idx: r });
                }
            }
            heap_sorted(heap).into_iter().map(|c| c.idx).collect()
        })
        .collect()
}

/// Precomputed neighbor sets for predicting `w` at new sites from the
/// latent draws at observed sites.
#[derive(Debug, Clone)]
pub struct KrigingPlan {
    /// neighbor observed-site indices per new site
    neighbor_sets: Vec<Vec<usize>>,
    /// distances new site -> neighbors
    to_site: Vec<Vec<f64>>,
    /// group id per new site (sites sharing a neighbor set share a group)
    group: Vec<usize>,
    /// row-major pairwise distances of each group's neighbor set
    group_pairs: Vec<Vec<f64>>,
    group_sizes: Vec<usize>,
}

/// Weights for one (group, draw): lower Cholesky factor of the neighbor correlation.
pub struct GroupFactor {
    pub k: usize,
    pub chol: Vec<f64>,
    pub phi: f64,
}

impl KrigingPlan {
    pub fn new(new_coords: &[[f64; 2]], observed: &[[f64; 2]], m: usize) -> Result<Self> {
        if observed.is_empty() {
            return Err(SaeError::InvalidInput("prediction needs at least one observed site".into()));
        }
        let sets = nearest_references(new_coords, observed, m);
        let mut key_to_group: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut group = Vec::with_capacity(sets.len());
        let mut group_pairs = Vec::new();
        let mut group_sizes = Vec::new();
        let mut to_site = Vec::with_capacity(sets.len());
        let mut canonical_sets = Vec::with_capacity(sets.len());
        for (q, set) in new_coords.iter().zip(sets) {
            let mut key = set.clone();
            key.sort_unstable();
            let gid = match key_to_group.get(&key) {
                Some(&g) => g,
                None => {
                    let g = group_pairs.len();
                    let k = key.len();
                    let mut pd = vec![0.0; k * k];
                    for a in 0..k {
                        for b in 0..a {
                            let v = dist(observed[key[a]], observed[key[b]]);
                            pd[a * k + b] = v;
                            pd[b * k + a] = v;
                        }
                    }
                    group_pairs.push(pd);
                    group_sizes.push(k);
                    key_to_group.insert(key.clone(), g);
                    g
                }
            };
            group.push(gid);
            to_site.push(key.iter().map(|&r| dist(*q, observed[r])).collect());
            canonical_sets.push(key);
        }
        Ok(KrigingPlan { neighbor_sets: canonical_sets, to_site, group, group_pairs, group_sizes })
    }

    pub fn len(&self) -> usize {
        self.group.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group.is_empty()
    }

    pub fn n_groups(&self) -> usize {
        self.group_pairs.len()
    }

    pub fn group_of(&self, site: usize) -> usize {
        self.group[site]
    }

    pub fn neighbor_set(&self, site: usize) -> &[usize] {
        &self.neighbor_sets[site]
    }

    pub fn factor_group(&self, g: usize, phi: f64) -> Result<GroupFactor> {
        let k = self.group_sizes[g];
        let pd = &self.group_pairs[g];
        let mut chol = vec![0.0; k * k];
        for a in 0..k {
            chol[a * k + a] = 1.0 + JITTER;
            for c in 0..a {
                let v = (-phi * pd[a * k + c]).exp();
                chol[a * k + c] = v;
                chol[c * k + a] = v;
            }
        }
        if !small_cholesky_in_place(&mut chol, k) {
            return Err(SaeError::Numerical("singular neighbor covariance after jitter".into()));
        }
        Ok(GroupFactor { k, chol, phi })
    }

    /// Conditional mean and variance of `w` at a new site for one draw.
    pub fn conditional(
        &self,
        site: usize,
        factor: &GroupFactor,
        w_observed: &[f64],
        sigma2_w: f64,
        scratch: &mut Vec<f64>,
    ) -> (f64, f64) {
        let k = factor.k;
        scratch.clear();
        scratch.extend(self.to_site[site].iter().map(|&d| (-factor.phi * d).exp()));
        let c = scratch.clone();
        small_cholesky_solve(&factor.chol, k, scratch);
        let mut mean = 0.0;
        let mut dot = 0.0;
        for a in 0..k {
            mean += scratch[a] * w_observed[self.neighbor_sets[site][a]];
            dot += scratch[a] * c[a];
        }
        let var = sigma2_w * (1.0 + JITTER - dot).max(0.0);
        (mean, var)
    }
}

/// Draw `w` at new sites for every retained iteration: row `s` of the result
/// holds the predictions for draw `s`.
pub fn predict_w<R: Rng + ?Sized>(
    new_coords: &[[f64; 2]],
    observed_coords: &[[f64; 2]],
    w_draws: &DMatrix<f64>,
    params_draws: &[SpatialParams],
    m: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if w_draws.ncols() != observed_coords.len() || w_draws.nrows() != params_draws.len() {
        return Err(SaeError::Dimension(format!(
            "w draws are {}x{}, expected {}x{}",
            w_draws.nrows(),
            w_draws.ncols(),
            params_draws.len(),
            observed_coords.len()
        )));
    }
    let plan = KrigingPlan::new(new_coords, observed_coords, m)?;
    let mdraws = params_draws.len();
    let mut out = DMatrix::zeros(mdraws, new_coords.len());
    let mut scratch = Vec::new();
    let mut w_row = vec![0.0; observed_coords.len()];
    for s in 0..mdraws {
        for (c, v) in w_row.iter_mut().enumerate() {
            *v = w_draws[(s, c)];
        }
        let mut cache: HashMap<usize, GroupFactor> = HashMap::new();
        for site in 0..new_coords.len() {
            let g = plan.group_of(site);
            if !cache.contains_key(&g) {
                cache.insert(g, plan.factor_group(g, params_draws[s].phi)?);
            }
            let (mu, var) =
                plan.conditional(site, &cache[&g], &w_row, params_draws[s].sigma2_w, &mut scratch);
            let z: f64 = rng.sample(StandardNormal);
            out[(s, site)] = mu + var.sqrt() * z;
        }
    }
    Ok(out)
}
