use std::collections::HashMap;

use zisae_core::bayes::{DrawLabels, McmcConfig};
use zisae_core::data::{Estimator, GridUnit, PlotRecord};
use zisae_core::estimator::{predict_holdout, run_estimator, EstimatorSettings};
use zisae_core::rng::derive_seed;
use zisae_core::sim::{
    draw_sample, fold_assignment, generate_population, kfold_cv, run_design, DonorWeights, Landscape, SimPopulation,
    SyntheticLandscape,
};

fn pixel(county: usize, x: f64) -> GridUnit {
    GridUnit { x: 0.0, y: 0.0, county, predictors_x: vec![x], predictors_v: vec![x] }
}

fn record(i: usize, county: usize, x: f64, biomass: f64) -> PlotRecord {
    PlotRecord {
        id: format!("r{i}"),
        x: i as f64,
        y: (i * 7 % 13) as f64,
        county,
        biomass,
        predictors_x: vec![x],
        predictors_v: vec![x],
    }
}

fn labels(j: usize) -> DrawLabels {
    DrawLabels {
        x_names: vec!["x".into()],
        v_names: vec!["x".into()],
        county_names: (0..j).map(|c| format!("c{c}")).collect(),
    }
}

#[test]
fn uniform_donor_choice_is_equiprobable() {
    let n = 100_000;
    let pixels = vec![pixel(0, 1.0); n];
    let donors: Vec<PlotRecord> = (0..3).map(|d| record(d, 0, d as f64, d as f64)).collect();
    let pop = generate_population(&pixels, &donors, 3, &vec![0; n], &[0; 3], DonorWeights::Uniform, 1, 41).unwrap();
    let mut counts = [0usize; 3];
    for &d in &pop.donor {
        counts[d] += 1;
    }
    let se = (1.0 / 3.0 * (2.0 / 3.0) / n as f64).sqrt();
    for c in counts {
        let f = c as f64 / n as f64;
        assert!((f - 1.0 / 3.0).abs() < 4.0 * se, "frequency {f}");
    }
}

fn flat_population(j: usize, per: usize) -> SimPopulation {
    let units: Vec<GridUnit> = (0..j * per).map(|i| pixel(i % j, i as f64)).collect();
    let biomass: Vec<f64> = (0..j * per).map(|i| i as f64).collect();
    let truth = (0..j).map(|c| (0..per).map(|k| (k * j + c) as f64).sum::<f64>() / per as f64).collect();
    SimPopulation { units, biomass, donor: (0..j * per).collect(), truth, warnings: Vec::new() }
}

#[test]
fn srs_inclusion_probability_is_n_over_big_n() {
    let pop = flat_population(2, 100);
    let reps = 10_000;
    let mut hits: HashMap<String, usize> = HashMap::new();
    for r in 0..reps {
        let s = draw_sample(&pop, &[10, 10], derive_seed(42, &[r])).unwrap();
        assert_eq!(s.len(), 20);
        for rec in s {
            *hits.entry(rec.id).or_default() += 1;
        }
    }
    assert_eq!(hits.len(), 200);
    let se = (0.1 * 0.9 / reps as f64).sqrt();
    for (id, h) in hits {
        let p = h as f64 / reps as f64;
        assert!((p - 0.1).abs() < 4.5 * se, "{id}: {p}");
    }
}

fn small_settings() -> EstimatorSettings {
    EstimatorSettings { mcmc: McmcConfig::with_lengths(1, 200, 1, 100, 0), bootstrap_b: 10, ..Default::default() }
}

#[test]
fn unsampled_county_still_estimated() {
    let pop = flat_population(3, 40);
    let mut sample = draw_sample(&pop, &[15, 0, 15], 43).unwrap();
    assert!(sample.iter().all(|r| r.county != 1));
    for r in sample.iter_mut() {
        r.biomass = 1.0 + (r.predictors_x[0] * 0.37).sin().abs() * 4.0;
        if r.predictors_x[0] as usize % 5 == 0 {
            r.biomass = 0.0;
        }
    }
    let out = run_estimator(&Estimator::FZiCvi.spec(), &sample, &pop.units, &labels(3), &small_settings(), 44).unwrap();
    assert_eq!(out.counties.len(), 3);
    assert!(out.counties[1].estimate.is_finite() && out.counties[1].estimate > 0.0);
}

fn loo_records() -> Vec<PlotRecord> {
    (0..20)
        .map(|i| {
            let x = (i as f64 * 0.61).sin() * 2.0;
            let b = if i % 4 == 0 { 0.0 } else { (3.0 + x).powi(2) };
            record(i, i % 2, x, b)
        })
        .collect()
}

#[test]
fn leave_one_out_matches_direct_loop() {
    let recs = loo_records();
    let n = recs.len();
    let spec = Estimator::FZiCvi.spec();
    let settings = small_settings();
    let (_, preds) = kfold_cv(&recs, n, &spec, &labels(2), &settings, 45).unwrap();
    let fold = fold_assignment(n, n, 45).unwrap();
    for f in 0..n {
        let i = fold.iter().position(|&g| g == f).unwrap();
        let train: Vec<PlotRecord> = recs.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, r)| r.clone()).collect();
        let direct = predict_holdout(&spec, &train, &recs[i..=i], &labels(2), &settings, derive_seed(45, &[0xCF, f as u64]))
            .unwrap();
        assert_eq!(direct[0], preds[i], "unit {i}");
    }
}

#[test]
fn population_depends_only_on_seed() {
    let land = SyntheticLandscape { counties_x: 2, counties_y: 1, pixels: 800, donors_per_county: 20, ..Default::default() }
        .generate(3)
        .unwrap();
    let make = |seed| {
        generate_population(
            &land.pixels,
            &land.donors,
            5,
            &land.pixel_strata,
            &land.donor_strata,
            DonorWeights::Bootstrap,
            2,
            seed,
        )
        .unwrap()
    };
    let (a, b, c) = (make(9), make(9), make(10));
    assert_eq!(a.donor, b.donor);
    assert_eq!(a.truth, b.truth);
    assert_ne!(a.donor, c.donor);
}

#[test]
fn all_nine_estimators_run_through_a_design() {
    let land = SyntheticLandscape { counties_x: 2, counties_y: 1, pixels: 400, donors_per_county: 20, ..Default::default() }
        .generate(4)
        .unwrap();
    let mut pop = generate_population(
        &land.pixels,
        &land.donors,
        5,
        &land.pixel_strata,
        &land.donor_strata,
        DonorWeights::Bootstrap,
        2,
        4,
    )
    .unwrap();
    Landscape::model_view(&mut pop);
    let specs: Vec<_> = Estimator::ALL.iter().map(|e| e.spec()).collect();
    let out = run_design(&pop, &land.matched_sizes(), &specs, &land.labels(), &small_settings(), 2, 5).unwrap();
    assert_eq!(out.len(), 9);
    for o in &out {
        assert_eq!(o.failures, 0, "{}: {:?}", o.name, o.warnings);
        assert!(o.metrics.iter().all(|m| m.replicates == 2 && m.rmse.is_finite()), "{}", o.name);
    }
}
