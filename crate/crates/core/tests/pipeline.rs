//! Data-to-decision runs through the public API.

use rayon::prelude::*;

use rankforge::discrepancy::OptimizerConfig;
use rankforge::lsce::BootstrapSettings;
use rankforge::rank_test::{bootstrap_test, GaussianReplicates};
use rankforge::rng::derive_seed;
use rankforge::sir::{build_matrices, generate, ModelId, ModelSpec, SirMatrices, SliceMode, WeightLaw, WeightedBootstrap};
use rankforge::stats::{lambda3, StatKind};
use rankforge::{estimate_rank, run_test, Lambda1Approx, RankTestSpec, TestMethod};

fn reduced(model: ModelId, n: usize, seed: u64) -> SirMatrices {
    let sample = generate(&ModelSpec::new(model, n, seed)).unwrap();
    build_matrices(&sample, SliceMode::EqualCount).unwrap().reduce_columns()
}

fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0_f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn bootstrap_law_matches_fresh_null_samples() {
    let n = 200;
    let opt = OptimizerConfig::default();
    let fresh: Vec<f64> = (0..2000u64)
        .into_par_iter()
        .map(|r| {
            let est = reduced(ModelId::I, n, derive_seed(31, &[r])).estimated().unwrap();
            lambda3(&est, 1, &opt).unwrap().value
        })
        .collect();
    let mats = reduced(ModelId::I, n, 32);
    let est = mats.estimated().unwrap();
    let stat = lambda3(&est, 1, &opt).unwrap();
    let source = WeightedBootstrap::new(&mats, WeightLaw::Normal);
    let settings = BootstrapSettings {
        replicates: 2000,
        alpha: 0.05,
        seed: 33,
    };
    let boot = bootstrap_test(&est, &stat, &settings, &source, &opt).unwrap();
    let d = ks_two_sample(&boot.replicate_values, &fresh);
    assert!(d < 0.08, "KS distance {d}");
}

#[test]
fn replicate_quantiles_stay_bounded_while_the_statistic_grows() {
    // Testing m = 0 when the true rank is 1.
    let mut quantiles = Vec::new();
    let mut stats = Vec::new();
    for n in [100, 400] {
        let mats = reduced(ModelId::I, n, 41);
        let est = mats.estimated().unwrap();
        let source = WeightedBootstrap::new(&mats, WeightLaw::Normal);
        let spec = RankTestSpec::new(
            StatKind::Lambda2,
            0,
            TestMethod::Bootstrap {
                replicates: 300,
                seed: 42,
            },
            0.05,
        );
        let r = run_test(&est, &spec, &source).unwrap();
        assert!(r.reject);
        quantiles.push(r.quantile);
        stats.push(r.statistic.value);
    }
    assert!(stats[1] > 3.0 * stats[0], "{stats:?}");
    assert!(quantiles[1] < 2.0 * quantiles[0], "{quantiles:?}");
}

#[test]
fn sequential_estimate_recovers_model_ranks() {
    for (model, truth) in [(ModelId::I, 1), (ModelId::III, 2)] {
        let mats = reduced(model, 3000, 51);
        let est = mats.estimated().unwrap();
        let spec = RankTestSpec::new(
            StatKind::Lambda2,
            0,
            TestMethod::Asymptotic {
                approx: Lambda1Approx::Wood,
            },
            0.05,
        );
        let fit = estimate_rank(&est, &spec, &GaussianReplicates::new(&est)).unwrap();
        assert_eq!(fit.d_hat, truth, "model {}", model.name());
        assert!(!fit.full_rank);
    }
}

#[test]
fn every_statistic_and_method_runs_on_sir_data() {
    let mats = reduced(ModelId::II, 150, 61);
    let est = mats.estimated().unwrap();
    let source = WeightedBootstrap::new(&mats, WeightLaw::Rademacher);
    for kind in [StatKind::Lambda1, StatKind::Lambda2, StatKind::Lambda3] {
        for method in [
            TestMethod::Asymptotic {
                approx: Lambda1Approx::Adjusted,
            },
            TestMethod::Bootstrap {
                replicates: 100,
                seed: 63,
            },
        ] {
            let r = run_test(&est, &RankTestSpec::new(kind, 1, method, 0.1), &source).unwrap();
            assert_eq!(r.reject, r.statistic.value > r.quantile);
            assert!(r.quantile.is_finite() && r.quantile > 0.0);
        }
    }
}
