//! Score residuals, simulated envelopes, and case-deletion influence.
//!
//! The ordinary score residual for a selected observation is
//! s = z - ρ/√(1-ρ²)·φ(ζ)/Φ(ζ); it has conditional mean zero by the same
//! cancellation that makes the β-score mean-zero, so standardization only
//! divides by the conditional (or unconditional) standard deviation.

use crate::error::{Error, Result};
use crate::estimate::{refit_warm, FitResult};
use crate::model::{hessian, predictors, Dataset, Theta};
use crate::numerics::{
    integrate, inv_mills, log_norm_cdf, log_norm_pdf, norm_cdf, norm_quantile, QuadratureSpec,
};
use crate::simulate::{gen_dataset, split_seed, Designs};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Ψ(μ₂, σ, ρ) = E(φ²(ζ)/Φ²(ζ) | U = 1).
///
/// Evaluated against the selected-sample density as
/// (1/Φ(μ₂)) ∫ φ(z)·φ²(ζ)/Φ(ζ) dz with ζ = (μ₂ + ρz)/√(1-ρ²); the value
/// does not depend on σ (the change of variables y → z cancels it).
pub fn psi(mu2: f64, sigma: f64, rho: f64) -> Result<f64> {
    if !(mu2.is_finite() && sigma.is_finite() && rho.is_finite()) {
        return Err(Error::Domain("non-finite psi argument".into()));
    }
    if sigma <= 0.0 {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    if rho.abs() >= 1.0 {
        return Err(Error::Domain(format!("|rho| must be below 1, got {rho}")));
    }
    let sq = (1.0 - rho * rho).sqrt();
    let log_cdf_mu2 = log_norm_cdf(mu2);
    let spec = QuadratureSpec::default();
    if rho.abs() <= std::f64::consts::FRAC_1_SQRT_2 {
        integrate(
            |z| {
                let zeta = (mu2 + rho * z) / sq;
                (log_norm_pdf(z) + 2.0 * log_norm_pdf(zeta) - log_norm_cdf(zeta) - log_cdf_mu2)
                    .exp()
            },
            &spec,
        )
    } else {
        // For |ρ| near 1 the integrand is a width-√(1-ρ²) bump in z; in the
        // ζ variable it is O(1)-wide instead.
        let jac = sq / rho.abs();
        integrate(
            |zeta| {
                let z = (zeta * sq - mu2) / rho;
                jac * (log_norm_pdf(z) + 2.0 * log_norm_pdf(zeta)
                    - log_norm_cdf(zeta)
                    - log_cdf_mu2)
                    .exp()
            },
            &spec,
        )
    }
}

/// Score residuals at the fitted parameters.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    /// s over the selected observations.
    pub ordinary: Vec<f64>,
    /// s/√Var(s | U=1) over the selected observations.
    pub standardized: Vec<f64>,
    /// s/√Var(s) over all observations, zero where censored.
    pub all_obs: Vec<f64>,
    /// Dataset row of each entry of `ordinary`/`standardized`.
    pub indices: Vec<usize>,
}

pub fn score_residuals(fit: &FitResult, data: &Dataset) -> Result<ResidualReport> {
    if !fit.converged {
        return Err(Error::NotConverged);
    }
    residuals_at(&fit.theta_hat, data)
}

pub(crate) fn residuals_at(theta: &Theta, data: &Dataset) -> Result<ResidualReport> {
    let pr = predictors(theta, data)?;
    let n = data.n();
    let mut ordinary = Vec::with_capacity(data.n_selected());
    let mut standardized = Vec::with_capacity(data.n_selected());
    let mut all_obs = vec![0.0; n];
    let mut indices = Vec::with_capacity(data.n_selected());
    for i in 0..n {
        if !data.u()[i] {
            continue;
        }
        let sigma = pr.sigma[i];
        let rho = pr.rho[i];
        let sq = pr.sqrt_1m_rho2[i];
        let mu2 = pr.mu2[i];
        let z = (data.y()[i] - pr.mu1[i]) / sigma;
        let zeta = (mu2 + rho * z) / sq;
        let s = z - rho / sq * inv_mills(zeta);
        let psi_i = psi(mu2, sigma, rho)?;
        let c = rho / sq;
        let var_sel = 1.0 + mu2 * rho * rho * inv_mills(mu2) + c * c * psi_i;
        ordinary.push(s);
        standardized.push(s / var_sel.sqrt());
        all_obs[i] = s / (norm_cdf(mu2) * var_sel).sqrt();
        indices.push(i);
    }
    Ok(ResidualReport {
        ordinary,
        standardized,
        all_obs,
        indices,
    })
}

/// Per-rank envelope band for the all-observation score residuals.
#[derive(Debug, Clone)]
pub struct EnvelopeBand {
    /// Normal plotting positions Φ⁻¹((i - 3/8)/(n + 1/4)).
    pub sorted_theoretical: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub coverage_level: f64,
    pub n_sim: usize,
    /// Simulated replicates whose refit failed; dropped from the band.
    pub n_failed: usize,
}

// Linear-interpolation quantile on sorted data; p = 0 and 1 hit min and max,
// so coverage_level = 1 reproduces the classic min/max envelope.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Simulate `n_sim` datasets from the fitted model on the same designs,
/// refit each (warm-started at θ̂), and form per-rank empirical bands of the
/// sorted all-observation residuals.
pub fn envelope(
    fit: &FitResult,
    data: &Dataset,
    n_sim: usize,
    level: f64,
    master_seed: u64,
) -> Result<EnvelopeBand> {
    if !fit.converged {
        return Err(Error::NotConverged);
    }
    if n_sim < 19 {
        return Err(Error::Invalid(format!("envelope needs n_sim >= 19, got {n_sim}")));
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::Invalid(format!("envelope level must be in (0,1], got {level}")));
    }
    let designs = Designs::from_dataset(data);
    let theta = &fit.theta_hat;
    let n = data.n();
    let sims: Vec<Option<Vec<f64>>> = (0..n_sim)
        .into_par_iter()
        .map(|k| {
            let seed = split_seed(master_seed, k as u64 + 1);
            let simdata = gen_dataset(theta, &designs, seed).ok()?;
            let refit = refit_warm(&simdata, theta, 300, Some(&fit.covariance)).ok()?;
            let rep = residuals_at(&refit, &simdata).ok()?;
            let mut sorted = rep.all_obs;
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("residuals are finite"));
            Some(sorted)
        })
        .collect();
    let kept: Vec<&Vec<f64>> = sims.iter().filter_map(|s| s.as_ref()).collect();
    let n_failed = n_sim - kept.len();
    if kept.is_empty() {
        return Err(Error::Invalid(
            "every envelope replicate failed to refit".into(),
        ));
    }
    let alpha = (1.0 - level) / 2.0;
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    let mut rank_vals = vec![0.0; kept.len()];
    for rank in 0..n {
        for (j, sim) in kept.iter().enumerate() {
            rank_vals[j] = sim[rank];
        }
        rank_vals.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        lower.push(quantile_sorted(&rank_vals, alpha));
        upper.push(quantile_sorted(&rank_vals, 1.0 - alpha));
    }
    let sorted_theoretical = (0..n)
        .map(|i| norm_quantile((i as f64 + 1.0 - 0.375) / (n as f64 + 0.25)))
        .collect();
    Ok(EnvelopeBand {
        sorted_theoretical,
        lower,
        upper,
        coverage_level: level,
        n_sim,
        n_failed,
    })
}

/// Weighting matrix of the case-deletion quadratic form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GcdWeight {
    /// Observed information -L̈(θ̂): the standard generalized Cook distance,
    /// consistent with the 2·dim(θ)/n threshold.
    #[default]
    ObservedInformation,
    /// The literal covariance reading of the weight, selectable for
    /// comparison.
    Covariance,
}

/// Case-deletion influence report.
#[derive(Debug, Clone)]
pub struct CookReport {
    /// GCD per observation; NaN where the deletion refit failed or the row
    /// was not in the requested subset.
    pub gcd: Vec<f64>,
    /// Reference line 2·dim(θ)/n.
    pub threshold: f64,
    /// Observations whose GCD exceeds the threshold.
    pub flagged: Vec<usize>,
    pub n_failed: usize,
}

/// GCD_i = (θ̂ - θ̂₍ᵢ₎)' M (θ̂ - θ̂₍ᵢ₎) with exact warm-started deletion
/// refits (iteration cap 50) and M the observed information by default.
pub fn cook_distance(fit: &FitResult, data: &Dataset) -> Result<Vec<f64>> {
    cook_distance_with(fit, data, GcdWeight::ObservedInformation, None).map(|r| r.gcd)
}

pub fn cook_distance_with(
    fit: &FitResult,
    data: &Dataset,
    weight: GcdWeight,
    subset: Option<&[usize]>,
) -> Result<CookReport> {
    if !fit.converged {
        return Err(Error::NotConverged);
    }
    let n = data.n();
    if let Some(rows) = subset {
        if let Some(&bad) = rows.iter().find(|&&i| i >= n) {
            return Err(Error::DimensionMismatch {
                what: "cook distance subset row",
                expected: n,
                found: bad,
            });
        }
    }
    let theta_hat = &fit.theta_hat;
    let m: DMatrix<f64> = match weight {
        GcdWeight::ObservedInformation => -hessian(theta_hat, data)?,
        GcdWeight::Covariance => fit.covariance.clone(),
    };
    let flat_hat = theta_hat.flatten();
    let targets: Vec<usize> = match subset {
        Some(rows) => rows.to_vec(),
        None => (0..n).collect(),
    };
    let deltas: Vec<(usize, Option<f64>)> = targets
        .par_iter()
        .map(|&i| {
            let reduced = data.without_row(i);
            let refit = match refit_warm(&reduced, theta_hat, 50, Some(&fit.covariance)) {
                Ok(t) => t,
                Err(_) => return (i, None),
            };
            let d: DVector<f64> = refit.flatten() - &flat_hat;
            (i, Some(d.dot(&(&m * &d))))
        })
        .collect();
    let mut gcd = vec![f64::NAN; n];
    let mut n_failed = 0;
    for (i, val) in deltas {
        match val {
            Some(v) => gcd[i] = v,
            None => n_failed += 1,
        }
    }
    let threshold = 2.0 * flat_hat.len() as f64 / n as f64;
    let flagged = (0..n)
        .filter(|&i| gcd[i].is_finite() && gcd[i] > threshold)
        .collect();
    Ok(CookReport {
        gcd,
        threshold,
        flagged,
        n_failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{fit, FitOptions};
    use crate::numerics::norm_pdf;
    use crate::simulate::{scenario, standard_normal, Scenario};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn psi_constant_integrand_at_rho_zero() {
        for &mu2 in &[-1.0, 0.0, 0.7, 2.0] {
            let expect = (norm_pdf(mu2) / norm_cdf(mu2)).powi(2);
            let got = psi(mu2, 1.0, 0.0).unwrap();
            assert!((got - expect).abs() < 1e-10, "mu2 = {mu2}: {got} vs {expect}");
        }
        assert_relative_eq!(psi(0.0, 1.0, 0.0).unwrap(), 0.6366197723675814, epsilon = 1e-10);
    }

    #[test]
    fn psi_does_not_depend_on_sigma() {
        let reference = psi(0.5, 1.0, 0.6).unwrap();
        for &sigma in &[0.5, 2.0] {
            assert_relative_eq!(psi(0.5, sigma, 0.6).unwrap(), reference, epsilon = 1e-12);
        }
    }

    // Draw from the conditional law of z given selection by rejection on the
    // latent selection error.
    fn draw_selected_z(rng: &mut ChaCha12Rng, mu2: f64, rho: f64) -> f64 {
        let sq = (1.0 - rho * rho).sqrt();
        loop {
            let eta = standard_normal(rng);
            let eps2 = standard_normal(rng);
            if mu2 + eps2 > 0.0 {
                return rho * eps2 + sq * eta;
            }
        }
    }

    #[test]
    fn psi_matches_monte_carlo() {
        let (mu2, rho) = (0.5, 0.6);
        let sq = (1.0f64 - rho * rho).sqrt();
        let quad = psi(mu2, 1.0, rho).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2024);
        let m = 1_000_000usize;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..m {
            let z = draw_selected_z(&mut rng, mu2, rho);
            let g = inv_mills((mu2 + rho * z) / sq).powi(2);
            sum += g;
            sum2 += g * g;
        }
        let mean = sum / m as f64;
        let se = ((sum2 / m as f64 - mean * mean) / m as f64).sqrt();
        assert!(
            (quad - mean).abs() < 3.0 * se,
            "quadrature {quad} vs MC {mean} (se {se})"
        );
    }

    #[test]
    fn ordinary_residual_mean_and_variance_identities() {
        // E(s|U=1) = 0 and Var(s|U=1) = 1 + μ₂ρ²·m(μ₂) + ρ²Ψ/(1-ρ²),
        // including high correlation.
        let m = 200_000usize;
        for &(mu2, rho) in &[(0.0, 0.8), (0.7, -0.8), (-0.5, 0.4), (1.0, 0.0)] {
            let rho: f64 = rho;
            let sq = (1.0 - rho * rho).sqrt();
            let mut rng = ChaCha12Rng::seed_from_u64(77);
            let mut sum = 0.0;
            let mut sum2 = 0.0;
            for _ in 0..m {
                let z = draw_selected_z(&mut rng, mu2, rho);
                let s = z - rho / sq * inv_mills((mu2 + rho * z) / sq);
                sum += s;
                sum2 += s * s;
            }
            let mean = sum / m as f64;
            let var = sum2 / m as f64 - mean * mean;
            let se_mean = (var / m as f64).sqrt();
            assert!(
                mean.abs() < 4.0 * se_mean,
                "(mu2, rho) = ({mu2}, {rho}): mean {mean} vs se {se_mean}"
            );
            let var_closed =
                1.0 + mu2 * rho * rho * inv_mills(mu2) + (rho / sq).powi(2) * psi(mu2, 1.0, rho).unwrap();
            // SE of the sample variance of s, estimated from fourth moments.
            let se_var = var * (2.0 / m as f64).sqrt() * 2.0;
            assert!(
                (var - var_closed).abs() < 3.0 * se_var.max(1e-3),
                "(mu2, rho) = ({mu2}, {rho}): var {var} vs closed {var_closed}"
            );
        }
    }

    #[test]
    fn residual_reduction_at_rho_zero() {
        let spec = Scenario::new(5, 500).unwrap();
        let data = scenario(&spec, 40).unwrap();
        let mut theta = spec.theta_true.clone();
        theta.kappa = nalgebra::DVector::zeros(2);
        let rep = residuals_at(&theta, &data).unwrap();
        let pr = predictors(&theta, &data).unwrap();
        for (k, &i) in rep.indices.iter().enumerate() {
            let z = (data.y()[i] - pr.mu1[i]) / pr.sigma[i];
            assert_relative_eq!(rep.ordinary[k], z, max_relative = 1e-12);
            assert_relative_eq!(rep.standardized[k], z, max_relative = 1e-12);
            assert_relative_eq!(
                rep.all_obs[i],
                z / norm_cdf(pr.mu2[i]).sqrt(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn standardized_residuals_are_near_standard() {
        let spec = Scenario::new(1, 2000).unwrap();
        let data = scenario(&spec, 321).unwrap();
        let fit = fit(&data, &FitOptions::default()).unwrap();
        let rep = score_residuals(&fit, &data).unwrap();
        let m = rep.standardized.len() as f64;
        let mean = rep.standardized.iter().sum::<f64>() / m;
        let var = rep.standardized.iter().map(|s| s * s).sum::<f64>() / m - mean * mean;
        assert!(mean.abs() < 4.0 / m.sqrt(), "mean {mean}");
        assert!((0.9..1.1).contains(&var), "variance {var}");
    }
}
