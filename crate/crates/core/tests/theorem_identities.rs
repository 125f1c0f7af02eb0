//! Monte Carlo checks of the score identities that justify the estimator:
//! zero-mean score, the information identity, and the conditional-density
//! normalization and moment closed forms on a grid that includes |ρ| = 0.95.

use genheck::model::{
    cond_density, conditional_moments, hessian, loglik, score, Theta,
};
use genheck::numerics::{integrate, inv_mills, QuadratureSpec};
use genheck::simulate::{gen_dataset, split_seed, Designs};
use nalgebra::{DMatrix, DVector};

fn fixed_theta() -> Theta {
    Theta {
        beta: DVector::from_vec(vec![0.8, 0.4]),
        gamma: DVector::from_vec(vec![0.4, 0.6]),
        lambda: DVector::from_vec(vec![-0.2, 0.3]),
        kappa: DVector::from_vec(vec![0.25, 0.35]),
    }
}

fn single_row_designs() -> Designs {
    let row = |a: f64, b: f64| DMatrix::from_row_slice(1, 2, &[a, b]);
    Designs {
        x: row(1.0, 0.5),
        w: row(1.0, -0.3),
        e: row(1.0, 0.2),
        v: row(1.0, 0.4),
    }
}

#[test]
fn score_has_mean_zero_and_information_identity_holds() {
    let theta = fixed_theta();
    let designs = single_row_designs();
    let dim = theta.dim();
    let reps = 20_000usize;
    let master = 0x5eed_2026u64;

    let mut sum = DVector::<f64>::zeros(dim);
    let mut sum_sq = DVector::<f64>::zeros(dim);
    let mut outer = DMatrix::<f64>::zeros(dim, dim);
    let mut hess = DMatrix::<f64>::zeros(dim, dim);
    for k in 0..reps {
        let data = gen_dataset(&theta, &designs, split_seed(master, k as u64 + 1)).unwrap();
        let s = score(&theta, &data).unwrap();
        sum += &s;
        sum_sq += s.map(|v| v * v);
        outer += &s * s.transpose();
        hess += hessian(&theta, &data).unwrap();
        // Spot-check that the per-draw likelihood is finite.
        if k == 0 {
            assert!(loglik(&theta, &data).unwrap().is_finite());
        }
    }
    let m = reps as f64;
    for j in 0..dim {
        let mean = sum[j] / m;
        let var = sum_sq[j] / m - mean * mean;
        let se = (var / m).sqrt();
        assert!(
            mean.abs() < 4.0 * se,
            "score coordinate {j} has mean {mean} (se {se})"
        );
    }
    let mean_outer = outer / m;
    let mean_hess = hess / m;
    let gap = (&mean_outer + &mean_hess).norm();
    let rel = gap / mean_outer.norm();
    assert!(rel < 0.05, "information identity gap {rel}");
}

#[test]
fn conditional_density_normalizes_on_grid() {
    let spec = QuadratureSpec::default();
    let mu1 = 0.3;
    for &mu2 in &[-1.5, 0.0, 1.5] {
        for &sigma in &[0.5, 2.0] {
            for &rho in &[-0.95, 0.0, 0.6, 0.95] {
                let total = integrate(
                    |y| cond_density(y, mu1, mu2, sigma, rho).unwrap(),
                    &spec,
                )
                .unwrap();
                assert!(
                    (total - 1.0).abs() < 1e-8,
                    "mass {total} at (mu2, sigma, rho) = ({mu2}, {sigma}, {rho})"
                );
            }
        }
    }
}

#[test]
fn moment_closed_forms_match_quadrature_on_grid() {
    let spec = QuadratureSpec::default();
    let mu1 = 0.3;
    for &mu2 in &[-1.5, 0.0, 1.5] {
        for &sigma in &[0.5, 2.0] {
            for &rho in &[-0.95, 0.0, 0.6, 0.95] {
                let m = conditional_moments(mu1, mu2, sigma, rho).unwrap();
                let expect = |g: &dyn Fn(f64) -> f64| {
                    integrate(
                        |y| g(y) * cond_density(y, mu1, mu2, sigma, rho).unwrap(),
                        &spec,
                    )
                    .unwrap()
                };
                let z = |y: f64| (y - mu1) / sigma;
                let zeta =
                    |y: f64| (mu2 + rho * z(y)) / (1.0f64 - rho * rho).sqrt();
                let checks = [
                    (m.e_y_given_sel, expect(&|y| y), "E(Y|sel)"),
                    (m.e_z_given_sel, expect(&|y| z(y)), "E(Z|sel)"),
                    (m.e_z2_given_sel, expect(&|y| z(y) * z(y)), "E(Z^2|sel)"),
                    (
                        m.e_mills_given_sel,
                        expect(&|y| inv_mills(zeta(y))),
                        "E(mills|sel)",
                    ),
                    (
                        m.e_zeta_mills_given_sel,
                        expect(&|y| zeta(y) * inv_mills(zeta(y))),
                        "E(zeta*mills|sel)",
                    ),
                ];
                for (closed, quad, label) in checks {
                    assert!(
                        (closed - quad).abs() < 1e-8,
                        "{label} at ({mu2}, {sigma}, {rho}): closed {closed} vs quadrature {quad}"
                    );
                }
            }
        }
    }
}
