//! Envelope calibration and determinism, misspecification escape, and
//! case-deletion influence sanity checks.

use genheck::diagnostics::{
    cook_distance, cook_distance_with, envelope, score_residuals, GcdWeight,
};
use genheck::simulate::{scenario, Scenario};
use genheck::{fit, fit_classic, FitOptions};
use nalgebra::{DMatrix, DVector};

#[test]
fn envelope_covers_well_specified_data() {
    let spec = Scenario::new(1, 500).unwrap();
    let data = scenario(&spec, 88).unwrap();
    let fitted = fit(&data, &FitOptions::default()).unwrap();
    let band = envelope(&fitted, &data, 60, 0.95, 1234).unwrap();
    // Occasional small-sample refits may sit on the correlation boundary.
    assert!(band.n_failed <= 3, "failed refits: {}", band.n_failed);
    let rep = score_residuals(&fitted, &data).unwrap();
    let mut sorted = rep.all_obs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let inside = sorted
        .iter()
        .enumerate()
        .filter(|(i, r)| **r >= band.lower[*i] && **r <= band.upper[*i])
        .count();
    let frac = inside as f64 / sorted.len() as f64;
    assert!(frac >= 0.92, "inside fraction {frac}");
    for i in 0..band.lower.len() {
        assert!(band.lower[i] <= band.upper[i]);
    }
}

#[test]
fn envelope_is_deterministic_and_nests_by_level() {
    let spec = Scenario::new(1, 200).unwrap();
    let data = scenario(&spec, 7).unwrap();
    let fitted = fit(&data, &FitOptions::default()).unwrap();
    let a = envelope(&fitted, &data, 19, 0.95, 42).unwrap();
    let b = envelope(&fitted, &data, 19, 0.95, 42).unwrap();
    assert_eq!(a.lower, b.lower);
    assert_eq!(a.upper, b.upper);
    let c = envelope(&fitted, &data, 19, 0.95, 43).unwrap();
    assert_ne!(a.lower, c.lower);

    // The full-coverage band (pointwise min/max of the simulations) contains
    // any narrower band from the same seed.
    let full = envelope(&fitted, &data, 19, 1.0, 42).unwrap();
    let half = envelope(&fitted, &data, 19, 0.5, 42).unwrap();
    for i in 0..full.lower.len() {
        assert!(full.lower[i] <= half.lower[i]);
        assert!(full.upper[i] >= half.upper[i]);
    }
}

#[test]
fn classic_fit_on_heteroscedastic_data_escapes_envelope() {
    // Varying sigma and rho in the generator, constant-parameter fit: the
    // residual QQ shape cannot be reproduced by the fitted model's own
    // simulations, so the tails escape the band.
    let spec = Scenario::new(1, 1500).unwrap();
    let data = scenario(&spec, 500).unwrap();
    let classic_data = data.classic_view();
    let fitted = fit_classic(&data, &FitOptions::default()).unwrap();
    let band = envelope(&fitted, &classic_data, 60, 0.95, 97).unwrap();
    let rep = score_residuals(&fitted, &classic_data).unwrap();
    let mut sorted = rep.all_obs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let outside: Vec<usize> = (0..n)
        .filter(|&i| sorted[i] < band.lower[i] || sorted[i] > band.upper[i])
        .collect();
    let frac = outside.len() as f64 / n as f64;
    assert!(frac >= 0.05, "outside fraction only {frac}");
    // The extreme ranks escape at a rate far above the nominal 5%.
    let tail = n / 10;
    let tail_points = 2 * tail;
    let tail_escapes = outside
        .iter()
        .filter(|&&i| i < tail || i >= n - tail)
        .count();
    let tail_rate = tail_escapes as f64 / tail_points as f64;
    assert!(
        tail_rate >= 0.5,
        "tail escape rate only {tail_rate} ({tail_escapes} of {tail_points})"
    );
}

fn duplicate_rows(data: &genheck::Dataset) -> genheck::Dataset {
    let n = data.n();
    let dup = |m: &DMatrix<f64>| {
        DMatrix::from_fn(2 * n, m.ncols(), |i, j| m[(i / 2, j)])
    };
    let y = DVector::from_fn(2 * n, |i, _| data.y()[i / 2]);
    let u: Vec<bool> = (0..2 * n).map(|i| data.u()[i / 2]).collect();
    genheck::Dataset::new(
        y,
        u,
        dup(data.x()),
        dup(data.w()),
        dup(data.e()),
        dup(data.v()),
    )
    .unwrap()
}

#[test]
fn cook_distance_halves_under_duplication() {
    let spec = Scenario::new(1, 150).unwrap();
    let data = scenario(&spec, 220).unwrap();
    let opts = FitOptions::default();

    let single = fit(&data, &opts).unwrap();
    let gcd_single = cook_distance(&single, &data).unwrap();
    for &g in &gcd_single {
        assert!(g.is_finite() && g >= 0.0);
    }

    let doubled = duplicate_rows(&data);
    let fit2 = fit(&doubled, &opts).unwrap();
    // Deleting one copy of observation i: half the information shift, so
    // half the quadratic form.
    let targets: Vec<usize> = (0..data.n()).map(|i| 2 * i).collect();
    let report = cook_distance_with(&fit2, &doubled, GcdWeight::ObservedInformation, Some(&targets))
        .unwrap();
    assert_eq!(report.n_failed, 0);
    let mut checked = 0;
    for (i, &g1) in gcd_single.iter().enumerate() {
        let g2 = report.gcd[2 * i];
        assert!(g2.is_finite() && g2 >= 0.0);
        if g1 > 5e-4 {
            let ratio = g2 / g1;
            assert!(
                (0.3..=0.6).contains(&ratio),
                "obs {i}: duplicated GCD ratio {ratio} (single {g1}, duplicated {g2})"
            );
            checked += 1;
        }
    }
    assert!(checked >= 5, "too few informative observations: {checked}");
    // With every row replicated the bulk of the deletions are uninfluential.
    let threshold_dup = 2.0 * fit2.theta_hat.dim() as f64 / doubled.n() as f64;
    let mut sorted: Vec<f64> = targets.iter().map(|&i| report.gcd[i]).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert!(sorted[sorted.len() / 2] < threshold_dup);
}

#[test]
fn cook_weight_variants_and_subset() {
    let spec = Scenario::new(1, 200).unwrap();
    let data = scenario(&spec, 9).unwrap();
    let fitted = fit(&data, &FitOptions::default()).unwrap();
    let subset = [0usize, 3, 7];
    let info = cook_distance_with(&fitted, &data, GcdWeight::ObservedInformation, Some(&subset))
        .unwrap();
    let cov =
        cook_distance_with(&fitted, &data, GcdWeight::Covariance, Some(&subset)).unwrap();
    for i in 0..data.n() {
        if subset.contains(&i) {
            assert!(info.gcd[i].is_finite() && info.gcd[i] >= 0.0);
            assert!(cov.gcd[i].is_finite() && cov.gcd[i] >= 0.0);
            assert_ne!(info.gcd[i], cov.gcd[i]);
        } else {
            assert!(info.gcd[i].is_nan());
        }
    }
    assert!((info.threshold - 2.0 * 11.0 / 200.0).abs() < 1e-12);
}
