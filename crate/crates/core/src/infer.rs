//! Likelihood-ratio, Wald, and gradient tests for linear restrictions,
//! chiefly the absence-of-selection-bias hypotheses on the κ block.
//!
//! The gradient statistic is the Terrell form S(θ̃)'(θ̂ - θ̃). It is not
//! guaranteed nonnegative in finite samples; negative values are floored at
//! zero and flagged on the result.

use crate::error::{Error, Result};
use crate::estimate::{fit, FitOptions, FitResult};
use crate::model::{score, Block, Dataset, Theta, ThetaLayout};
use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestKind {
    LikelihoodRatio,
    Wald,
    Gradient,
}

impl std::fmt::Display for TestKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TestKind::LikelihoodRatio => "LR",
            TestKind::Wald => "Wald",
            TestKind::Gradient => "Gradient",
        })
    }
}

/// Linear restriction θ_R = r on positions of the flattened parameter.
#[derive(Debug, Clone)]
pub struct Restriction {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Restriction {
    /// Pin every coefficient of one block at zero.
    pub fn zero_block(layout: ThetaLayout, block: Block) -> Restriction {
        let indices: Vec<usize> = layout.block_range(block).collect();
        let values = vec![0.0; indices.len()];
        Restriction { indices, values }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.indices.is_empty() || self.indices.len() != self.values.len() {
            return Err(Error::Invalid(
                "restriction needs equally many indices and values, at least one".into(),
            ));
        }
        let mut seen = vec![false; dim];
        for &i in &self.indices {
            if i >= dim {
                return Err(Error::DimensionMismatch {
                    what: "restriction index",
                    expected: dim,
                    found: i,
                });
            }
            if seen[i] {
                return Err(Error::Invalid(format!("restriction index {i} repeated")));
            }
            seen[i] = true;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub kind: TestKind,
    /// Set when a raw negative statistic was floored at zero.
    pub floored_negative: bool,
}

/// Upper-tail chi-square probability.
pub fn chi2_sf(statistic: f64, df: usize) -> f64 {
    if statistic <= 0.0 {
        return 1.0;
    }
    statrs::function::gamma::gamma_ur(df as f64 / 2.0, statistic / 2.0)
}

/// Likelihood-ratio test: 2(ℓ_full - ℓ_restricted) against chi-square(df).
pub fn lr_test(fit_full: &FitResult, fit_restricted: &FitResult, df: usize) -> Result<TestResult> {
    if !fit_full.converged || !fit_restricted.converged {
        return Err(Error::NotConverged);
    }
    if df == 0 {
        return Err(Error::Invalid("likelihood-ratio test needs df >= 1".into()));
    }
    if fit_full.loglik < fit_restricted.loglik - 1e-6 {
        return Err(Error::NotNested {
            full: fit_full.loglik,
            restricted: fit_restricted.loglik,
        });
    }
    let raw = 2.0 * (fit_full.loglik - fit_restricted.loglik);
    let statistic = raw.max(0.0);
    Ok(TestResult {
        statistic,
        df,
        p_value: chi2_sf(statistic, df),
        kind: TestKind::LikelihoodRatio,
        floored_negative: raw < 0.0,
    })
}

/// Wald test (θ̂_R - r)' [Cov_RR]⁻¹ (θ̂_R - r) against chi-square(|R|).
pub fn wald_test(fit: &FitResult, restriction: &Restriction) -> Result<TestResult> {
    if !fit.converged {
        return Err(Error::NotConverged);
    }
    let dim = fit.theta_hat.dim();
    restriction.validate(dim)?;
    let flat = fit.theta_hat.flatten();
    let k = restriction.indices.len();
    let diff = DVector::from_iterator(
        k,
        restriction
            .indices
            .iter()
            .zip(restriction.values.iter())
            .map(|(&i, &v)| flat[i] - v),
    );
    let mut cov_rr = DMatrix::zeros(k, k);
    for (a, &ia) in restriction.indices.iter().enumerate() {
        for (b, &ib) in restriction.indices.iter().enumerate() {
            cov_rr[(a, b)] = fit.covariance[(ia, ib)];
        }
    }
    let chol = Cholesky::new(cov_rr).ok_or(Error::SingularCovariance)?;
    let statistic = diff.dot(&chol.solve(&diff));
    Ok(TestResult {
        statistic,
        df: k,
        p_value: chi2_sf(statistic, k),
        kind: TestKind::Wald,
        floored_negative: false,
    })
}

/// Gradient test S(θ̃)'(θ̂ - θ̃) with θ̃ the restricted MLE embedded in the
/// full parameter space.
pub fn gradient_test(
    theta_restricted: &Theta,
    theta_full: &Theta,
    data: &Dataset,
    df: usize,
) -> Result<TestResult> {
    if theta_restricted.layout() != theta_full.layout() {
        return Err(Error::DimensionMismatch {
            what: "restricted vs full theta",
            expected: theta_full.dim(),
            found: theta_restricted.dim(),
        });
    }
    if df == 0 {
        return Err(Error::Invalid("gradient test needs df >= 1".into()));
    }
    let s = score(theta_restricted, data)?;
    let raw = s.dot(&(theta_full.flatten() - theta_restricted.flatten()));
    let statistic = raw.max(0.0);
    Ok(TestResult {
        statistic,
        df,
        p_value: chi2_sf(statistic, df),
        kind: TestKind::Gradient,
        floored_negative: raw < 0.0,
    })
}

/// A fit with some coefficients pinned at zero, plus its embedding into the
/// unrestricted parameter space.
#[derive(Debug, Clone)]
pub struct RestrictedFit {
    pub fit: FitResult,
    /// Restricted estimate written in full-space coordinates (zeros at the
    /// dropped positions) — the θ̃ that [`gradient_test`] expects.
    pub theta_full_space: Theta,
}

/// Fit with the listed design columns removed, which pins the matching
/// coefficients at zero. Exact for zero restrictions; no constrained
/// optimization is involved.
pub fn fit_with_zero_columns(
    data: &Dataset,
    options: &FitOptions,
    drops: &[(Block, Vec<usize>)],
) -> Result<RestrictedFit> {
    let mut reduced = data.clone();
    for (block, cols) in drops {
        reduced = reduced.drop_columns(*block, cols)?;
    }
    let fit = fit(&reduced, options)?;
    let theta_full_space = embed(&fit.theta_hat, data.layout(), drops)?;
    Ok(RestrictedFit {
        fit,
        theta_full_space,
    })
}

fn embed(reduced: &Theta, full: ThetaLayout, drops: &[(Block, Vec<usize>)]) -> Result<Theta> {
    let mut out = Theta::zeros(full);
    for (block, len) in [
        (Block::Beta, full.p),
        (Block::Gamma, full.q),
        (Block::Lambda, full.r),
        (Block::Kappa, full.s),
    ] {
        let dropped: &[usize] = drops
            .iter()
            .find(|(b, _)| *b == block)
            .map(|(_, cols)| cols.as_slice())
            .unwrap_or(&[]);
        let src = match block {
            Block::Beta => &reduced.beta,
            Block::Gamma => &reduced.gamma,
            Block::Lambda => &reduced.lambda,
            Block::Kappa => &reduced.kappa,
        };
        let dst = match block {
            Block::Beta => &mut out.beta,
            Block::Gamma => &mut out.gamma,
            Block::Lambda => &mut out.lambda,
            Block::Kappa => &mut out.kappa,
        };
        let mut k = 0;
        for j in 0..len {
            if dropped.contains(&j) {
                continue;
            }
            if k >= src.len() {
                return Err(Error::DimensionMismatch {
                    what: "embedded restricted theta",
                    expected: len - dropped.len(),
                    found: src.len(),
                });
            }
            dst[j] = src[k];
            k += 1;
        }
        if k != src.len() {
            return Err(Error::DimensionMismatch {
                what: "embedded restricted theta",
                expected: len - dropped.len(),
                found: src.len(),
            });
        }
    }
    Ok(out)
}
