use rand::Rng;
use rand_distr::StandardNormal;

use zisae_core::bayes::{DrawLabels, FitInput};
use zisae_core::data::{Estimator, GridUnit, PlotRecord};
use zisae_core::estimator::EstimatorSettings;
use zisae_core::freq::{
    bootstrap_mse, bootstrap_mse_with, county_estimates, fit_bernoulli_glmm_laplace, fit_lmm_reml, fit_two_stage,
    predict_units, FreqFit, GlmmFit, LmmFit,
};
use zisae_core::rng::{derive_seed, rng_from_seed, SaeRng};
use zisae_core::sim::{run_design, SimPopulation};
use zisae_core::transform::TransformSpec;

fn normal(rng: &mut SaeRng) -> f64 {
    rng.sample(StandardNormal)
}

fn logistic(e: f64) -> f64 {
    1.0 / (1.0 + (-e).exp())
}

#[test]
fn balanced_reml_matches_anova_solution() {
    let mut rng = rng_from_seed(71);
    let (j, m) = (10usize, 20usize);
    let mut y = Vec::new();
    let mut county = Vec::new();
    for c in 0..j {
        let u = 2.0 * normal(&mut rng);
        for _ in 0..m {
            y.push(10.0 + u + normal(&mut rng));
            county.push(c);
        }
    }
    let grand = y.iter().sum::<f64>() / y.len() as f64;
    let means: Vec<f64> = (0..j).map(|c| y[c * m..(c + 1) * m].iter().sum::<f64>() / m as f64).collect();
    let msb = means.iter().map(|g| m as f64 * (g - grand).powi(2)).sum::<f64>() / (j - 1) as f64;
    let msw = (0..y.len()).map(|i| (y[i] - means[county[i]]).powi(2)).sum::<f64>() / (j * (m - 1)) as f64;
    assert!(msb > msw);
    let fit = fit_lmm_reml(&y, &[], 0, &county, j).unwrap();
    assert!((fit.tau2 - msw).abs() < 1e-6, "{} vs {msw}", fit.tau2);
    let s2b = (msb - msw) / m as f64;
    assert!((fit.sigma2_b - s2b).abs() < 1e-6, "{} vs {s2b}", fit.sigma2_b);
}

#[test]
fn glmm_recovers_known_coefficients() {
    let (alpha0, alpha1) = (-0.5, 1.2);
    let (j, n) = (20usize, 4000usize);
    let mut hits = [0usize; 2];
    for rep in 0..20u64 {
        let mut rng = rng_from_seed(derive_seed(72, &[rep]));
        let a: Vec<f64> = (0..j).map(|_| 0.6 * normal(&mut rng)).collect();
        let county: Vec<usize> = (0..n).map(|i| i % j).collect();
        let v: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let z: Vec<u8> =
            (0..n).map(|i| u8::from(rng.gen::<f64>() < logistic(alpha0 + alpha1 * v[i] + a[county[i]]))).collect();
        let f = fit_bernoulli_glmm_laplace(&z, &v, 1, &county, j).unwrap();
        hits[0] += usize::from((f.alpha0 - alpha0).abs() < 3.0 * f.std_errors[0]);
        hits[1] += usize::from((f.alpha[0] - alpha1).abs() < 3.0 * f.std_errors[1]);
    }
    assert!(hits.iter().all(|&h| h >= 18), "{hits:?} of 20 within 3 SE");
}

/// Plain logistic regression by Newton-Raphson.
fn logistic_regression(z: &[u8], v: &[f64]) -> [f64; 2] {
    let mut b = [0.0f64; 2];
    for _ in 0..50 {
        let (mut g, mut h) = ([0.0; 2], [[0.0; 2]; 2]);
        for (zi, vi) in z.iter().zip(v) {
            let x = [1.0, *vi];
            let p = logistic(b[0] + b[1] * vi);
            for a in 0..2 {
                g[a] += (*zi as f64 - p) * x[a];
                for c in 0..2 {
                    h[a][c] += p * (1.0 - p) * x[a] * x[c];
                }
            }
        }
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        b[0] += (h[1][1] * g[0] - h[0][1] * g[1]) / det;
        b[1] += (h[0][0] * g[1] - h[1][0] * g[0]) / det;
    }
    b
}

#[test]
fn single_county_reduces_to_logistic_regression() {
    let mut rng = rng_from_seed(73);
    let n = 500;
    let v: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let z: Vec<u8> = v.iter().map(|x| u8::from(rng.gen::<f64>() < logistic(0.3 + 0.8 * x))).collect();
    let f = fit_bernoulli_glmm_laplace(&z, &v, 1, &vec![0; n], 1).unwrap();
    let b = logistic_regression(&z, &v);
    assert!(f.sigma2_a < 1e-3, "{}", f.sigma2_a);
    assert!((f.alpha0 - b[0]).abs() < 1e-3 && (f.alpha[0] - b[1]).abs() < 1e-3, "{:?} vs {b:?}", (f.alpha0, f.alpha[0]));
}

fn fit(blups: Vec<f64>, modes: Vec<f64>) -> FreqFit {
    FreqFit {
        lmm: LmmFit { beta0: 3.0, beta: vec![0.7], sigma2_b: 0.4, tau2: 0.6, blups, reml_loglik: 0.0 },
        glmm: GlmmFit {
            alpha0: -6.410,
            alpha: vec![0.268],
            sigma2_a: 0.0,
            modes,
            laplace_loglik: 0.0,
            std_errors: vec![0.0; 2],
            ridge: false,
            warnings: Vec::new(),
        },
        transform: TransformSpec::SquareRoot,
    }
}

#[test]
fn presence_probabilities_match_hand_values() {
    let f = fit(vec![0.0], vec![0.0]);
    let grid: Vec<GridUnit> = [5.0, 23.9, 41.2]
        .iter()
        .map(|&tri| GridUnit { x: 0.0, y: 0.0, county: 0, predictors_x: vec![0.0], predictors_v: vec![tri] })
        .collect();
    let hand = [0.006243197749516551, 0.49880000230399457, 0.990354772485055];
    for (u, h) in predict_units(&f, &grid).unwrap().iter().zip(hand) {
        assert!((u.phat - h).abs() < 1e-9, "{} vs {h}", u.phat);
    }
}

#[test]
fn county_estimates_match_brute_force() {
    let mut rng = rng_from_seed(74);
    let j = 4;
    let f = fit(vec![0.3, -0.2, 0.0, 0.5], vec![0.4, -0.6, 0.1, 0.0]);
    let grid: Vec<GridUnit> = (0..100)
        .map(|i| GridUnit {
            x: 0.0,
            y: 0.0,
            county: i % j,
            predictors_x: vec![normal(&mut rng)],
            predictors_v: vec![rng.gen_range(10.0..40.0)],
        })
        .collect();
    let est = county_estimates(&f, &grid, j).unwrap();
    for c in 0..j {
        let units: Vec<&GridUnit> = grid.iter().filter(|u| u.county == c).collect();
        let mut total = 0.0;
        for u in &units {
            let p = logistic(-6.410 + f.glmm.modes[c] + 0.268 * u.predictors_v[0]);
            let m = 3.0 + f.lmm.blups[c] + 0.7 * u.predictors_x[0];
            total += p * (m * m + 0.6);
        }
        let brute = total / units.len() as f64;
        assert!((est[c] - brute).abs() <= 1e-12 * brute.abs(), "county {c}: {} vs {brute}", est[c]);
    }
}

fn design(rng: &mut SaeRng, j: usize, per: usize) -> (Vec<PlotRecord>, DrawLabels) {
    let a: Vec<f64> = (0..j).map(|_| 0.5 * normal(rng)).collect();
    let b: Vec<f64> = (0..j).map(|_| 0.7 * normal(rng)).collect();
    let recs = (0..j * per)
        .map(|i| {
            let c = i % j;
            let x = normal(rng);
            let present = rng.gen::<f64>() < logistic(0.5 + x + a[c]);
            let t: f64 = 6.0 + 1.5 * x + b[c] + normal(rng);
            PlotRecord {
                id: format!("p{i}"),
                x: 0.0,
                y: 0.0,
                county: c,
                biomass: if present { t.max(0.0).powi(2) } else { 0.0 },
                predictors_x: vec![x],
                predictors_v: vec![x],
            }
        })
        .collect();
    let labels = DrawLabels {
        x_names: vec!["x".into()],
        v_names: vec!["x".into()],
        county_names: (0..j).map(|c| format!("c{c}")).collect(),
    };
    (recs, labels)
}

#[test]
fn degenerate_generator_gives_zero_rmse_hat() {
    let mut rng = rng_from_seed(75);
    let (recs, labels) = design(&mut rng, 3, 20);
    let input = FitInput::from_records(&recs, TransformSpec::SquareRoot, labels).unwrap();
    let mut f = fit_two_stage(&input, TransformSpec::SquareRoot).unwrap();
    // no randomness left: certain presence, no random effects, no noise
    f.lmm.sigma2_b = 0.0;
    f.lmm.tau2 = 0.0;
    f.lmm.blups.iter_mut().for_each(|b| *b = 0.0);
    f.glmm.sigma2_a = 0.0;
    f.glmm.alpha0 = 50.0;
    f.glmm.alpha.iter_mut().for_each(|a| *a = 0.0);
    f.glmm.modes.iter_mut().for_each(|m| *m = 0.0);
    let grid: Vec<GridUnit> = recs.iter().map(GridUnit::from).collect();
    let b = bootstrap_mse_with(&f, &input, &grid, 10, 1, |_| Ok(f.clone())).unwrap();
    assert!(b.rmse.iter().all(|&r| r < 1e-9), "{:?}", b.rmse);
}

#[test]
fn bootstrap_is_seed_deterministic() {
    let mut rng = rng_from_seed(76);
    let (recs, labels) = design(&mut rng, 4, 25);
    let input = FitInput::from_records(&recs, TransformSpec::SquareRoot, labels).unwrap();
    let f = fit_two_stage(&input, TransformSpec::SquareRoot).unwrap();
    let grid: Vec<GridUnit> = recs.iter().map(GridUnit::from).collect();
    let a = bootstrap_mse(&f, &input, &grid, 2, 9).unwrap();
    let b = bootstrap_mse(&f, &input, &grid, 2, 9).unwrap();
    assert_eq!(a, b);
    let c = bootstrap_mse(&f, &input, &grid, 2, 10).unwrap();
    assert_ne!(a.rmse, c.rmse);
}

#[test]
fn bootstrap_rmse_tracks_empirical_rmse() {
    // finite population drawn from the model the estimator assumes
    let mut rng = rng_from_seed(77);
    let (j, per) = (10usize, 300usize);
    let (recs, labels) = design(&mut rng, j, per);
    let units: Vec<GridUnit> = recs.iter().map(GridUnit::from).collect();
    let biomass: Vec<f64> = recs.iter().map(|r| r.biomass).collect();
    let mut truth = vec![0.0; j];
    for r in &recs {
        truth[r.county] += r.biomass / per as f64;
    }
    let pop = SimPopulation { units, biomass, donor: (0..j * per).collect(), truth, warnings: Vec::new() };
    let settings = EstimatorSettings { bootstrap_b: 100, ..Default::default() };
    let out = run_design(&pop, &vec![30; j], &[Estimator::FZiCvi.spec()], &labels, &settings, 50, 78).unwrap();
    let o = &out[0];
    assert_eq!(o.failures, 0);
    let rmse: f64 = o.metrics.iter().map(|m| m.rmse).sum::<f64>() / j as f64;
    let rmse_hat: f64 = o.metrics.iter().map(|m| m.rmse + m.rmse_hat_bias).sum::<f64>() / j as f64;
    let ratio = rmse_hat / rmse;
    assert!((0.7..=1.3).contains(&ratio), "mean RMSE-hat {rmse_hat:.3} vs empirical {rmse:.3}");
}
