//! Maximum-likelihood fitting.
//!
//! The likelihood is maximized by BFGS with a strong-Wolfe line search
//! (c₁ = 1e-4, c₂ = 0.9), seeded with the identity scaled by 1/‖score‖ at
//! the starting point. Standard errors always come from the observed
//! information (finite differences of the analytic score), never from the
//! BFGS curvature approximation, which is a poor estimate at termination.

use crate::error::{Error, Result};
use crate::model::{loglik, predictors, score, Block, Dataset, Theta, ThetaLayout};
use crate::model::hessian;
use crate::numerics::{inv_mills, log_norm_cdf, norm_quantile};
use nalgebra::{Cholesky, DMatrix, DVector};

/// Line-search family used inside the optimizer. Only strong Wolfe is
/// implemented; the variant exists so fits record their configuration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum LineSearch {
    #[default]
    StrongWolfe,
}

/// Starting-point strategy for [`fit`].
#[derive(Debug, Clone, Default)]
pub enum Init {
    /// β, γ and the dispersion/correlation intercepts from the classic
    /// constant-σ, constant-ρ fit; remaining coefficients start at zero.
    #[default]
    ClassicHeckman,
    Supplied(Theta),
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Sup-norm tolerance on the score at the solution. `None` applies
    /// 1e-6 · max(1, |loglik(θ₀)|/n), evaluated at the starting point.
    pub grad_tol: Option<f64>,
    /// Stop when the relative step falls below this.
    pub step_tol: f64,
    pub line_search: LineSearch,
    pub init: Init,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 300,
            grad_tol: None,
            step_tol: 1e-10,
            line_search: LineSearch::StrongWolfe,
            init: Init::ClassicHeckman,
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::Invalid("max_iter must be at least 1".into()));
        }
        if let Some(t) = self.grad_tol {
            if !(t > 0.0) {
                return Err(Error::Invalid(format!("grad_tol must be positive, got {t}")));
            }
        }
        if !(self.step_tol > 0.0) {
            return Err(Error::Invalid(format!(
                "step_tol must be positive, got {}",
                self.step_tol
            )));
        }
        Ok(())
    }
}

/// A converged maximum-likelihood fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: Theta,
    pub loglik: f64,
    /// Inverse observed information at the optimum.
    pub covariance: DMatrix<f64>,
    pub std_errors: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Sup-norm of the score at the optimum.
    pub grad_norm: f64,
    /// True when the arctanh-correlation predictor hit its clamp at the
    /// optimum: the fit sits on the working boundary of |ρ| < 1.
    pub boundary_warning: bool,
    pub n: usize,
    pub n_selected: usize,
}

impl FitResult {
    pub fn layout(&self) -> ThetaLayout {
        self.theta_hat.layout()
    }
}

fn validate_for_fit(data: &Dataset) -> Result<()> {
    if data.n_selected() == 0 {
        return Err(Error::NoSelectedObservations);
    }
    if data.n_censored() == 0 {
        return Err(Error::MissingCensoring);
    }
    let dim = data.layout().dim();
    if dim >= data.n() {
        return Err(Error::InsufficientData { dim, n: data.n() });
    }
    Ok(())
}

/// Maximum-likelihood fit of the full model on `data`.
pub fn fit(data: &Dataset, options: &FitOptions) -> Result<FitResult> {
    options.validate()?;
    validate_for_fit(data)?;
    let theta0 = match &options.init {
        Init::ClassicHeckman => init_theta(data)?,
        Init::Supplied(t) => {
            if t.layout() != data.layout() {
                return Err(Error::DimensionMismatch {
                    what: "supplied initial theta",
                    expected: data.layout().dim(),
                    found: t.layout().dim(),
                });
            }
            if !t.is_finite() {
                return Err(Error::Invalid("supplied initial theta has non-finite entries".into()));
            }
            t.clone()
        }
    };
    fit_from(data, theta0, options)
}

/// Fit with dispersion and correlation restricted to intercepts (r = s = 1):
/// the constant-σ, constant-ρ model on the same outcome/selection designs.
pub fn fit_classic(data: &Dataset, options: &FitOptions) -> Result<FitResult> {
    options.validate()?;
    let classic = data.classic_view();
    validate_for_fit(&classic)?;
    let theta0 = match &options.init {
        Init::ClassicHeckman => bootstrap_theta(&classic)?,
        Init::Supplied(t) => {
            if t.layout() != classic.layout() {
                return Err(Error::DimensionMismatch {
                    what: "supplied initial theta for the classic fit",
                    expected: classic.layout().dim(),
                    found: t.layout().dim(),
                });
            }
            t.clone()
        }
    };
    fit_from(&classic, theta0, options)
}

/// Starting point per the estimation recipe: β, γ, and the dispersion and
/// correlation intercepts from the classic fit; every remaining dispersion
/// and correlation coefficient starts at zero. Requires the first column of
/// E and of V to be an intercept (unless the block is empty).
pub fn init_theta(data: &Dataset) -> Result<Theta> {
    let layout = data.layout();
    let n = data.n();
    for (block, name) in [(Block::Lambda, "E"), (Block::Kappa, "V")] {
        let m = data.design(block);
        if m.ncols() > 0 && (0..n).any(|i| m[(i, 0)] != 1.0) {
            return Err(Error::Invalid(format!(
                "classic-fit initialization requires the first column of {name} to be an intercept"
            )));
        }
    }
    // Base model: same β/γ designs, intercept-only (or empty) dispersion and
    // correlation. For r = s = 1 this is exactly the classic fit.
    let base = {
        let e = if layout.r == 0 {
            DMatrix::zeros(n, 0)
        } else {
            DMatrix::repeat(n, 1, 1.0)
        };
        let v = if layout.s == 0 {
            DMatrix::zeros(n, 0)
        } else {
            DMatrix::repeat(n, 1, 1.0)
        };
        Dataset::new(
            data.y().clone(),
            data.u().to_vec(),
            data.x().clone(),
            data.w().clone(),
            e,
            v,
        )?
    };
    validate_for_fit(&base)?;
    let opts = FitOptions::default();
    let theta0 = bootstrap_theta(&base)?;
    let core = maximize(&base, theta0, &opts, opts.max_iter, None)?;

    let mut lambda = DVector::zeros(layout.r);
    if layout.r > 0 {
        lambda[0] = core.theta.lambda[0];
    }
    let mut kappa = DVector::zeros(layout.s);
    if layout.s > 0 {
        kappa[0] = core.theta.kappa[0];
    }
    Ok(Theta {
        beta: core.theta.beta,
        gamma: core.theta.gamma,
        lambda,
        kappa,
    })
}

/// One row of a coefficient table.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z_value: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Wald-type coefficient table: z = estimate/se, two-sided normal p-value,
/// and the `level` confidence interval estimate ± z_{(1+level)/2}·se.
pub fn summary(fit: &FitResult, level: f64) -> Result<Vec<SummaryRow>> {
    if !fit.converged {
        return Err(Error::NotConverged);
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Invalid(format!("confidence level must be in (0,1), got {level}")));
    }
    let layout = fit.layout();
    let flat = fit.theta_hat.flatten();
    let zq = norm_quantile(0.5 * (1.0 + level));
    let mut rows = Vec::with_capacity(flat.len());
    for (block, tag) in [
        (Block::Beta, "beta"),
        (Block::Gamma, "gamma"),
        (Block::Lambda, "lambda"),
        (Block::Kappa, "kappa"),
    ] {
        for (k, idx) in layout.block_range(block).enumerate() {
            let estimate = flat[idx];
            let se = fit.std_errors[idx];
            let z = estimate / se;
            // 2Φ(-|z|) without cancellation.
            let p = 2.0 * log_norm_cdf(-z.abs()).exp();
            rows.push(SummaryRow {
                name: format!("{tag}[{k}]"),
                estimate,
                std_error: se,
                z_value: z,
                p_value: p.min(1.0),
                ci_low: estimate - zq * se,
                ci_high: estimate + zq * se,
            });
        }
    }
    Ok(rows)
}

pub(crate) struct CoreFit {
    pub theta: Theta,
    pub loglik: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// Maximize the likelihood from a starting point; errors with
/// `NonConvergence` if the tolerances are not met. No information matrix is
/// computed, which keeps warm-started refits (envelopes, case deletion)
/// cheap.
pub(crate) fn maximize(
    data: &Dataset,
    theta0: Theta,
    options: &FitOptions,
    max_iter: usize,
    h0: Option<&DMatrix<f64>>,
) -> Result<CoreFit> {
    let layout = data.layout();
    let ll0 = loglik(&theta0, data)?;
    if !ll0.is_finite() {
        return Err(Error::Invalid(
            "log-likelihood is not finite at the starting point".into(),
        ));
    }
    let grad_tol = options
        .grad_tol
        .unwrap_or_else(|| 1e-6 * (ll0.abs() / data.n() as f64).max(1.0));

    // Optimize with unit-RMS design columns: conditioning then reflects
    // correlations, not units (a raw-dollar covariate next to indicators
    // would otherwise stall the curvature updates). The reparameterization
    // is exact; the stopping rule and all reported quantities stay in the
    // caller's coordinates.
    let scales_x = column_rms(data.x());
    let scales_w = column_rms(data.w());
    let scales_e = column_rms(data.e());
    let scales_v = column_rms(data.v());
    let mut scales = DVector::zeros(layout.dim());
    {
        let mut k = 0;
        for block in [&scales_x, &scales_w, &scales_e, &scales_v] {
            for &s in block.iter() {
                scales[k] = s;
                k += 1;
            }
        }
    }
    let scaled_data = Dataset::new(
        data.y().clone(),
        data.u().to_vec(),
        scale_columns(data.x(), &scales_x),
        scale_columns(data.w(), &scales_w),
        scale_columns(data.e(), &scales_e),
        scale_columns(data.v(), &scales_v),
    )?;
    let mut flat0 = theta0.flatten();
    for j in 0..flat0.len() {
        flat0[j] *= scales[j];
    }
    let h0_scaled = h0.map(|h| {
        let mut out = h.clone();
        for a in 0..out.nrows() {
            for b in 0..out.ncols() {
                out[(a, b)] *= scales[a] * scales[b];
            }
        }
        out
    });

    let mut eval = |flat: &DVector<f64>| {
        let theta = Theta::from_flat(layout, flat).expect("layout fixed");
        match loglik(&theta, &scaled_data) {
            Ok(l) if l.is_finite() => {
                let s = score(&theta, &scaled_data).expect("dims checked");
                (-l, -s)
            }
            // Non-finite objective: report +inf so the line search backs off.
            _ => (f64::INFINITY, DVector::zeros(layout.dim())),
        }
    };
    let outcome = bfgs::minimize(
        &mut eval,
        flat0,
        &bfgs::Options {
            max_iter,
            grad_tol,
            step_tol: options.step_tol,
            h0: h0_scaled,
            // Original-coordinate gradient: ∂ℓ/∂θ_j = s_j · ∂ℓ/∂θ'_j.
            grad_weights: Some(scales.clone()),
        },
    );
    if !outcome.converged {
        return Err(Error::NonConvergence {
            iterations: outcome.iterations,
            grad_norm: outcome.grad_norm,
        });
    }
    let mut flat_hat = outcome.x;
    for j in 0..flat_hat.len() {
        flat_hat[j] /= scales[j];
    }
    Ok(CoreFit {
        theta: Theta::from_flat(layout, &flat_hat)?,
        loglik: -outcome.f,
        iterations: outcome.iterations,
        grad_norm: outcome.grad_norm,
    })
}

/// Per-column root mean square; inert (all-zero) columns get scale 1.
fn column_rms(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        m.ncols(),
        (0..m.ncols()).map(|j| {
            let rms = (m.column(j).norm_squared() / m.nrows().max(1) as f64).sqrt();
            if rms.is_finite() && rms > 0.0 {
                rms
            } else {
                1.0
            }
        }),
    )
}

fn scale_columns(m: &DMatrix<f64>, scales: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for j in 0..out.ncols() {
        let f = 1.0 / scales[j];
        for i in 0..out.nrows() {
            out[(i, j)] *= f;
        }
    }
    out
}

fn fit_from(data: &Dataset, theta0: Theta, options: &FitOptions) -> Result<FitResult> {
    let core = maximize(data, theta0, options, options.max_iter, None)?;
    let h = hessian(&core.theta, data)?;
    let info = -h;
    let chol = Cholesky::new(info).ok_or(Error::SingularInformation)?;
    let covariance = chol.inverse();
    let std_errors = DVector::from_iterator(
        covariance.nrows(),
        (0..covariance.nrows()).map(|j| covariance[(j, j)].sqrt()),
    );
    if std_errors.iter().any(|s| !s.is_finite()) {
        return Err(Error::SingularInformation);
    }
    let boundary_warning = predictors(&core.theta, data)?.clamped;
    Ok(FitResult {
        theta_hat: core.theta,
        loglik: core.loglik,
        covariance,
        std_errors,
        converged: true,
        iterations: core.iterations,
        grad_norm: core.grad_norm,
        boundary_warning,
        n: data.n(),
        n_selected: data.n_selected(),
    })
}

/// Warm-started refit used by case-deletion and envelope simulation. The
/// curvature seed is typically the covariance of the fit being perturbed.
pub(crate) fn refit_warm(
    data: &Dataset,
    warm: &Theta,
    max_iter: usize,
    h0: Option<&DMatrix<f64>>,
) -> Result<Theta> {
    validate_for_fit(data)?;
    let options = FitOptions::default();
    Ok(maximize(data, warm.clone(), &options, max_iter, h0)?.theta)
}

/// OLS on the selected rows plus a probit selection fit: the conventional
/// starting point for the classic model itself.
fn bootstrap_theta(data: &Dataset) -> Result<Theta> {
    let layout = data.layout();
    let sel: Vec<usize> = (0..data.n()).filter(|&i| data.u()[i]).collect();
    let xs = data.x().select_rows(sel.iter());
    let ys = DVector::from_iterator(sel.len(), sel.iter().map(|&i| data.y()[i]));
    let xtx = xs.tr_mul(&xs);
    let xty = xs.tr_mul(&ys);
    let chol = Cholesky::new(xtx).ok_or(Error::SingularInformation)?;
    let beta = chol.solve(&xty);
    let resid = &ys - &xs * &beta;
    let sigma2 = resid.norm_squared() / sel.len() as f64;

    let gamma = probit_gamma(data)?;

    let mut lambda = DVector::zeros(layout.r);
    if layout.r > 0 {
        lambda[0] = 0.5 * sigma2.max(1e-12).ln();
    }
    Ok(Theta {
        beta,
        gamma,
        lambda,
        kappa: DVector::zeros(layout.s),
    })
}

/// Probit MLE for the selection equation, via the same BFGS machinery.
fn probit_gamma(data: &Dataset) -> Result<DVector<f64>> {
    let scales = column_rms(data.w());
    let w = scale_columns(data.w(), &scales);
    let u = data.u();
    let n = data.n();
    let q = w.ncols();
    let mut eval = |gamma: &DVector<f64>| {
        let mu2 = &w * gamma;
        let mut ll = 0.0;
        let mut c = DVector::zeros(n);
        for i in 0..n {
            if u[i] {
                ll += log_norm_cdf(mu2[i]);
                c[i] = inv_mills(mu2[i]);
            } else {
                ll += log_norm_cdf(-mu2[i]);
                c[i] = -inv_mills(-mu2[i]);
            }
        }
        (-ll, -w.tr_mul(&c))
    };
    // Initializer-grade tolerance: the outer BFGS run owns the final
    // optimum, this only has to land in its basin.
    let outcome = bfgs::minimize(
        &mut eval,
        DVector::zeros(q),
        &bfgs::Options {
            max_iter: 200,
            grad_tol: 1e-4,
            step_tol: 1e-12,
            h0: None,
        },
    );
    if !outcome.converged {
        return Err(Error::NonConvergence {
            iterations: outcome.iterations,
            grad_norm: outcome.grad_norm,
        });
    }
    let mut gamma = outcome.x;
    for j in 0..q {
        gamma[j] /= scales[j];
    }
    Ok(gamma)
}

mod bfgs {
    //! Dense BFGS with a strong-Wolfe line search (Nocedal & Wright alg. 3.5
    //! and 3.6). Minimization convention; callers negate the likelihood.

    use nalgebra::{DMatrix, DVector};

    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    const ALPHA_MAX: f64 = 1e4;

    // Near the optimum the predicted decrease falls below the rounding of f
    // itself and sufficient decrease can no longer be observed; the test gets
    // one-ulp-scale slack so that curvature-based acceptance takes over
    // (approximate Wolfe). Accepted objective values are nonincreasing within
    // 4·eps·(1 + |f|).
    fn armijo_holds(ft: f64, f0: f64, alpha: f64, dphi0: f64) -> bool {
        ft <= f0 + C1 * alpha * dphi0 + rounding_fuzz(f0)
    }

    fn rounding_fuzz(f: f64) -> f64 {
        4.0 * f64::EPSILON * (1.0 + f.abs())
    }

    pub(crate) struct Options {
        pub max_iter: usize,
        pub grad_tol: f64,
        pub step_tol: f64,
        /// Curvature seed for warm restarts (e.g. the covariance from a fit
        /// on nearly the same data); falls back to the scaled identity.
        pub h0: Option<DMatrix<f64>>,
        /// Coordinate weights for the convergence sup-norm; lets callers
        /// optimize in rescaled coordinates while stopping on the original
        /// gradient.
        pub grad_weights: Option<DVector<f64>>,
    }

    pub(crate) struct Outcome {
        pub x: DVector<f64>,
        pub f: f64,
        pub grad_norm: f64,
        pub iterations: usize,
        pub converged: bool,
        /// Objective value at the start and after each accepted step; read
        /// by the monotone-improvement test.
        #[allow(dead_code)]
        pub f_history: Vec<f64>,
    }

    fn weighted_sup(g: &DVector<f64>, weights: &Option<DVector<f64>>) -> f64 {
        match weights {
            Some(w) => g
                .iter()
                .zip(w.iter())
                .map(|(gi, wi)| (gi * wi).abs())
                .fold(0.0, f64::max),
            None => g.amax(),
        }
    }

    pub(crate) fn minimize<F>(eval: &mut F, x0: DVector<f64>, opts: &Options) -> Outcome
    where
        F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
    {
        let n = x0.len();
        let (mut fx, mut gx) = eval(&x0);
        let mut x = x0;
        let mut f_history = vec![fx];
        if n == 0 {
            return Outcome {
                x,
                f: fx,
                grad_norm: 0.0,
                iterations: 0,
                converged: true,
                f_history,
            };
        }
        let g0_norm = gx.norm();
        let seed_scale = if g0_norm.is_finite() && g0_norm > 0.0 {
            1.0 / g0_norm
        } else {
            1.0
        };
        let (mut h_inv, mut first_update) = match &opts.h0 {
            Some(h) if h.nrows() == n && h.ncols() == n => (h.clone(), false),
            _ => (DMatrix::<f64>::identity(n, n) * seed_scale, true),
        };
        let mut iterations = 0usize;
        loop {
            let grad_norm = weighted_sup(&gx, &opts.grad_weights);
            if grad_norm <= opts.grad_tol {
                return Outcome {
                    x,
                    f: fx,
                    grad_norm,
                    iterations,
                    converged: true,
                    f_history,
                };
            }
            if iterations >= opts.max_iter {
                return Outcome {
                    x,
                    f: fx,
                    grad_norm,
                    iterations,
                    converged: false,
                    f_history,
                };
            }
            iterations += 1;
            let mut dir = -(&h_inv * &gx);
            let mut dphi0 = dir.dot(&gx);
            if !(dphi0 < 0.0) || !dphi0.is_finite() {
                // Curvature stale; restart from scaled steepest descent.
                h_inv = DMatrix::identity(n, n) * seed_scale;
                dir = -&gx * seed_scale;
                dphi0 = dir.dot(&gx);
                if !(dphi0 < 0.0) {
                    return Outcome {
                        x,
                        f: fx,
                        grad_norm,
                        iterations,
                        converged: false,
                        f_history,
                    };
                }
            }
            let Some(step) = line_search(eval, &x, fx, &dir, dphi0) else {
                // No acceptable decrease along the direction.
                if std::env::var("GENHECK_LS_TRACE").is_ok() {
                    eprintln!("LS FAIL iter {iterations} f {fx:.14e} gnorm {grad_norm:.3e} dphi0 {dphi0:.3e}");
                }
                return Outcome {
                    x,
                    f: fx,
                    grad_norm,
                    iterations,
                    converged: grad_norm <= opts.grad_tol,
                    f_history,
                };
            };
            let s = &step.x - &x;
            let yv = &step.g - &gx;
            let sy = s.dot(&yv);
            if sy > 1e-10 * s.norm() * yv.norm() {
                if first_update {
                    // Rescale before the first update so the approximation
                    // starts on the curvature scale the line search just
                    // measured (Nocedal & Wright eq. 6.20). The seed above
                    // only shapes the first direction.
                    let scale = sy / yv.dot(&yv);
                    if scale.is_finite() && scale > 0.0 {
                        h_inv = DMatrix::identity(n, n) * scale;
                    }
                    first_update = false;
                }
                let rho = 1.0 / sy;
                let hy = &h_inv * &yv;
                let yhy = yv.dot(&hy);
                h_inv -= rho * (&s * hy.transpose() + &hy * s.transpose());
                h_inv += (rho * rho * yhy + rho) * (&s * s.transpose());
            }
            let step_rel = s.norm() / x.norm().max(1.0);
            x = step.x;
            fx = step.f;
            gx = step.g;
            f_history.push(fx);
            if step_rel < opts.step_tol {
                let grad_norm = weighted_sup(&gx, &opts.grad_weights);
                return Outcome {
                    x,
                    f: fx,
                    grad_norm,
                    iterations,
                    converged: grad_norm <= opts.grad_tol,
                    f_history,
                };
            }
        }
    }

    struct Accepted {
        x: DVector<f64>,
        f: f64,
        g: DVector<f64>,
    }

    fn line_search<F>(
        eval: &mut F,
        x: &DVector<f64>,
        f0: f64,
        dir: &DVector<f64>,
        dphi0: f64,
    ) -> Option<Accepted>
    where
        F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
    {
        let mut a_prev = 0.0;
        let mut f_prev = f0;
        let mut dphi_prev = dphi0;
        let mut alpha = 1.0;
        for iter in 0..30 {
            let xt = x + dir * alpha;
            let (ft, gt) = eval(&xt);
            if !ft.is_finite() {
                return zoom(eval, x, f0, dphi0, dir, a_prev, f_prev, dphi_prev, alpha, ft);
            }
            let dphit = gt.dot(dir);
            if !armijo_holds(ft, f0, alpha, dphi0)
                || (iter > 0 && ft >= f_prev + rounding_fuzz(f_prev))
            {
                return zoom(eval, x, f0, dphi0, dir, a_prev, f_prev, dphi_prev, alpha, ft);
            }
            if dphit.abs() <= -C2 * dphi0 {
                return Some(Accepted { x: xt, f: ft, g: gt });
            }
            if dphit >= 0.0 {
                return zoom(eval, x, f0, dphi0, dir, alpha, ft, dphit, a_prev, f_prev);
            }
            a_prev = alpha;
            f_prev = ft;
            dphi_prev = dphit;
            if alpha >= ALPHA_MAX {
                break;
            }
            alpha = (2.0 * alpha).min(ALPHA_MAX);
        }
        None
    }

    // Quadratic-interpolation zoom keeping [a_lo, a_hi] a bracket; a_lo always
    // holds the lowest Armijo-feasible value seen.
    #[allow(clippy::too_many_arguments)]
    fn zoom<F>(
        eval: &mut F,
        x: &DVector<f64>,
        f0: f64,
        dphi0: f64,
        dir: &DVector<f64>,
        mut a_lo: f64,
        mut f_lo: f64,
        mut dphi_lo: f64,
        mut a_hi: f64,
        mut f_hi: f64,
    ) -> Option<Accepted>
    where
        F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
    {
        for _ in 0..40 {
            let da = a_hi - a_lo;
            if da.abs() < 1e-16 * a_lo.abs().max(1.0) {
                break;
            }
            let mut at = if f_hi.is_finite() {
                let denom = 2.0 * (f_hi - f_lo - dphi_lo * da);
                if denom.abs() > f64::MIN_POSITIVE {
                    a_lo - dphi_lo * da * da / denom
                } else {
                    a_lo + 0.5 * da
                }
            } else {
                a_lo + 0.5 * da
            };
            // Keep the trial strictly interior.
            let lo = a_lo.min(a_hi) + 0.1 * da.abs();
            let hi = a_lo.max(a_hi) - 0.1 * da.abs();
            if !(at >= lo && at <= hi) {
                at = a_lo + 0.5 * da;
            }
            let xt = x + dir * at;
            let (ft, gt) = eval(&xt);
            if !ft.is_finite() || !armijo_holds(ft, f0, at, dphi0) || ft >= f_lo + rounding_fuzz(f_lo)
            {
                a_hi = at;
                f_hi = ft;
            } else {
                let dphit = gt.dot(dir);
                if dphit.abs() <= -C2 * dphi0 {
                    return Some(Accepted { x: xt, f: ft, g: gt });
                }
                if dphit * (a_hi - a_lo) >= 0.0 {
                    a_hi = a_lo;
                    f_hi = f_lo;
                }
                a_lo = at;
                f_lo = ft;
                dphi_lo = dphit;
            }
        }
        // Curvature never satisfied: fall back to the best Armijo point.
        if a_lo > 0.0 && f_lo < f0 {
            let xt = x + dir * a_lo;
            let (ft, gt) = eval(&xt);
            if ft.is_finite() && ft < f0 {
                return Some(Accepted { x: xt, f: ft, g: gt });
            }
        }
        None
    }

    #[cfg(test)]
    mod tests {
        use super::*;

        #[test]
        fn minimizes_rosenbrock() {
            let mut eval = |v: &DVector<f64>| {
                let (a, b) = (1.0, 100.0);
                let f = (a - v[0]).powi(2) + b * (v[1] - v[0] * v[0]).powi(2);
                let g = DVector::from_vec(vec![
                    -2.0 * (a - v[0]) - 4.0 * b * (v[1] - v[0] * v[0]) * v[0],
                    2.0 * b * (v[1] - v[0] * v[0]),
                ]);
                (f, g)
            };
            let out = minimize(
                &mut eval,
                DVector::from_vec(vec![-1.2, 1.0]),
                &Options {
                    max_iter: 200,
                    grad_tol: 1e-8,
                    step_tol: 1e-12,
                    h0: None,
                },
            );
            assert!(out.converged);
            assert!((out.x[0] - 1.0).abs() < 1e-6);
            assert!((out.x[1] - 1.0).abs() < 1e-6);
        }

        #[test]
        fn quadratic_converges_in_few_iterations() {
            let mut eval = |v: &DVector<f64>| {
                let f = 0.5 * (4.0 * v[0] * v[0] + v[1] * v[1]);
                (f, DVector::from_vec(vec![4.0 * v[0], v[1]]))
            };
            let out = minimize(
                &mut eval,
                DVector::from_vec(vec![3.0, -5.0]),
                &Options {
                    max_iter: 50,
                    grad_tol: 1e-10,
                    step_tol: 1e-14,
                    h0: None,
                },
            );
            assert!(out.converged);
            assert!(out.iterations < 20);
            assert!(out.x.amax() < 1e-8);
        }
    }
}
