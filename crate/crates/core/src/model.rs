//! Sample-selection model with covariate-dependent outcome mean, selection
//! propensity, dispersion, and error correlation.
//!
//! Observation mechanism: the latent pair (Y*₁ᵢ, Y*₂ᵢ) = (μ₁ᵢ + ε₁ᵢ, μ₂ᵢ + ε₂ᵢ)
//! has bivariate normal errors with Var(ε₁ᵢ) = σᵢ², Var(ε₂ᵢ) = 1 and
//! Corr = ρᵢ; only uᵢ = 1{Y*₂ᵢ > 0} and yᵢ = Y*₁ᵢ·uᵢ are observed. The four
//! linear predictors are μ₁ = x'β, μ₂ = w'γ, log σ = e'λ, arctanh ρ = v'κ,
//! so σᵢ > 0 and |ρᵢ| < 1 hold for every finite parameter value and the
//! optimizer never needs constraint handling.

use crate::error::{Error, Result};
use crate::numerics::{fd_step, inv_mills, log_norm_cdf, log_norm_pdf, pairwise_sum};
use nalgebra::{DMatrix, DVector};

/// |v'κ| is clamped here before tanh: tanh(18) is 1 to double precision, and
/// letting the predictor run past it would underflow 1 - ρ².
pub const CORR_PREDICTOR_CLAMP: f64 = 18.0;

/// Which parameter block (and design matrix) a column index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Beta,
    Gamma,
    Lambda,
    Kappa,
}

/// Outcomes, selection indicators, and the four design matrices.
///
/// `y` is meaningful only where `u` is true; rows with `u = 1` and non-finite
/// `y` are rejected at construction. Zero-column designs are allowed and pin
/// the corresponding predictor at its link origin (σ ≡ 1, ρ ≡ 0), which is
/// how restricted fits drop whole blocks.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: DVector<f64>,
    u: Vec<bool>,
    x: DMatrix<f64>,
    w: DMatrix<f64>,
    e: DMatrix<f64>,
    v: DMatrix<f64>,
    n_selected: usize,
}

fn check_rows(what: &'static str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n {
        return Err(Error::DimensionMismatch {
            what,
            expected: n,
            found: m.nrows(),
        });
    }
    if m.iter().any(|e| !e.is_finite()) {
        return Err(Error::Invalid(format!("non-finite entry in design matrix {what}")));
    }
    Ok(())
}

impl Dataset {
    pub fn new(
        y: DVector<f64>,
        u: Vec<bool>,
        x: DMatrix<f64>,
        w: DMatrix<f64>,
        e: DMatrix<f64>,
        v: DMatrix<f64>,
    ) -> Result<Self> {
        let n = y.len();
        if u.len() != n {
            return Err(Error::DimensionMismatch {
                what: "selection indicator u",
                expected: n,
                found: u.len(),
            });
        }
        check_rows("X", &x, n)?;
        check_rows("W", &w, n)?;
        check_rows("E", &e, n)?;
        check_rows("V", &v, n)?;
        for i in 0..n {
            if u[i] && !y[i].is_finite() {
                return Err(Error::Invalid(format!(
                    "observation {i} is selected (u = 1) but its outcome is missing or non-finite"
                )));
            }
        }
        let n_selected = u.iter().filter(|&&s| s).count();
        Ok(Dataset {
            y,
            u,
            x,
            w,
            e,
            v,
            n_selected,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_selected(&self) -> usize {
        self.n_selected
    }

    pub fn n_censored(&self) -> usize {
        self.n() - self.n_selected
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn u(&self) -> &[bool] {
        &self.u
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn e(&self) -> &DMatrix<f64> {
        &self.e
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn design(&self, block: Block) -> &DMatrix<f64> {
        match block {
            Block::Beta => &self.x,
            Block::Gamma => &self.w,
            Block::Lambda => &self.e,
            Block::Kappa => &self.v,
        }
    }

    pub fn layout(&self) -> ThetaLayout {
        ThetaLayout {
            p: self.x.ncols(),
            q: self.w.ncols(),
            r: self.e.ncols(),
            s: self.v.ncols(),
        }
    }

    /// The same data with dispersion and correlation designs replaced by a
    /// single intercept column — the constant-σ, constant-ρ restriction.
    pub fn classic_view(&self) -> Dataset {
        let n = self.n();
        Dataset {
            y: self.y.clone(),
            u: self.u.clone(),
            x: self.x.clone(),
            w: self.w.clone(),
            e: DMatrix::repeat(n, 1, 1.0),
            v: DMatrix::repeat(n, 1, 1.0),
            n_selected: self.n_selected,
        }
    }

    /// Copy with one observation removed (case-deletion diagnostics).
    pub fn without_row(&self, row: usize) -> Dataset {
        let keep: Vec<usize> = (0..self.n()).filter(|&i| i != row).collect();
        let take_rows = |m: &DMatrix<f64>| m.select_rows(keep.iter());
        let y = DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.y[i]));
        let u: Vec<bool> = keep.iter().map(|&i| self.u[i]).collect();
        let n_selected = u.iter().filter(|&&s| s).count();
        Dataset {
            y,
            u,
            x: take_rows(&self.x),
            w: take_rows(&self.w),
            e: take_rows(&self.e),
            v: take_rows(&self.v),
            n_selected,
        }
    }

    /// Copy with the given columns of one block's design removed; used to fit
    /// models with the matching coefficients pinned at zero.
    pub fn drop_columns(&self, block: Block, cols: &[usize]) -> Result<Dataset> {
        let m = self.design(block);
        for &c in cols {
            if c >= m.ncols() {
                return Err(Error::DimensionMismatch {
                    what: "dropped column index",
                    expected: m.ncols(),
                    found: c,
                });
            }
        }
        let keep: Vec<usize> = (0..m.ncols()).filter(|c| !cols.contains(c)).collect();
        let reduced = m.select_columns(keep.iter());
        let mut out = self.clone();
        match block {
            Block::Beta => out.x = reduced,
            Block::Gamma => out.w = reduced,
            Block::Lambda => out.e = reduced,
            Block::Kappa => out.v = reduced,
        }
        Ok(out)
    }
}

/// Block sizes (p, q, r, s) of a parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaLayout {
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub s: usize,
}

impl ThetaLayout {
    pub fn dim(&self) -> usize {
        self.p + self.q + self.r + self.s
    }

    pub fn block_range(&self, block: Block) -> std::ops::Range<usize> {
        match block {
            Block::Beta => 0..self.p,
            Block::Gamma => self.p..self.p + self.q,
            Block::Lambda => self.p + self.q..self.p + self.q + self.r,
            Block::Kappa => self.p + self.q + self.r..self.dim(),
        }
    }
}

/// Parameter vector θ = (β, γ, λ, κ) with its block structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub lambda: DVector<f64>,
    pub kappa: DVector<f64>,
}

impl Theta {
    pub fn zeros(layout: ThetaLayout) -> Theta {
        Theta {
            beta: DVector::zeros(layout.p),
            gamma: DVector::zeros(layout.q),
            lambda: DVector::zeros(layout.r),
            kappa: DVector::zeros(layout.s),
        }
    }

    pub fn layout(&self) -> ThetaLayout {
        ThetaLayout {
            p: self.beta.len(),
            q: self.gamma.len(),
            r: self.lambda.len(),
            s: self.kappa.len(),
        }
    }

    pub fn dim(&self) -> usize {
        self.layout().dim()
    }

    /// Concatenate (β, γ, λ, κ) into one vector; exact inverse of
    /// [`Theta::from_flat`].
    pub fn flatten(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        let mut k = 0;
        for block in [&self.beta, &self.gamma, &self.lambda, &self.kappa] {
            for &b in block.iter() {
                out[k] = b;
                k += 1;
            }
        }
        out
    }

    pub fn from_flat(layout: ThetaLayout, flat: &DVector<f64>) -> Result<Theta> {
        if flat.len() != layout.dim() {
            return Err(Error::DimensionMismatch {
                what: "flattened theta",
                expected: layout.dim(),
                found: flat.len(),
            });
        }
        let grab = |range: std::ops::Range<usize>| {
            DVector::from_iterator(range.len(), range.map(|i| flat[i]))
        };
        Ok(Theta {
            beta: grab(layout.block_range(Block::Beta)),
            gamma: grab(layout.block_range(Block::Gamma)),
            lambda: grab(layout.block_range(Block::Lambda)),
            kappa: grab(layout.block_range(Block::Kappa)),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.beta.iter().all(|v| v.is_finite())
            && self.gamma.iter().all(|v| v.is_finite())
            && self.lambda.iter().all(|v| v.is_finite())
            && self.kappa.iter().all(|v| v.is_finite())
    }
}

/// Per-observation predictor values after the links.
#[derive(Debug, Clone)]
pub struct Predictors {
    pub mu1: DVector<f64>,
    pub mu2: DVector<f64>,
    pub sigma: DVector<f64>,
    pub rho: DVector<f64>,
    /// log σᵢ = e'λ, kept to avoid exp/log round trips in the likelihood.
    pub log_sigma: DVector<f64>,
    /// √(1-ρᵢ²) computed as sech(v'κ), which keeps full precision where
    /// 1 - tanh² would cancel.
    pub sqrt_1m_rho2: DVector<f64>,
    /// Raw v'κ before clamping; rows past the clamp contribute no κ-gradient
    /// (the implemented likelihood is flat in κ there).
    pub corr_predictor: DVector<f64>,
    /// True when some |v'κ| hit [`CORR_PREDICTOR_CLAMP`]; surfaces as a
    /// boundary warning on fit results.
    pub clamped: bool,
}

fn check_theta_dims(theta: &Theta, data: &Dataset) -> Result<()> {
    let tl = theta.layout();
    let dl = data.layout();
    if tl != dl {
        return Err(Error::DimensionMismatch {
            what: "theta blocks vs design columns",
            expected: dl.dim(),
            found: tl.dim(),
        });
    }
    Ok(())
}

/// Apply the four linear predictors and their links.
pub fn predictors(theta: &Theta, data: &Dataset) -> Result<Predictors> {
    check_theta_dims(theta, data)?;
    let mu1 = data.x() * &theta.beta;
    let mu2 = data.w() * &theta.gamma;
    let log_sigma = data.e() * &theta.lambda;
    let t_raw = data.v() * &theta.kappa;
    let mut clamped = false;
    let n = data.n();
    let mut rho = DVector::zeros(n);
    let mut sqrt_1m_rho2 = DVector::zeros(n);
    for i in 0..n {
        let mut t = t_raw[i];
        if t.abs() > CORR_PREDICTOR_CLAMP {
            t = t.signum() * CORR_PREDICTOR_CLAMP;
            clamped = true;
        }
        rho[i] = t.tanh();
        sqrt_1m_rho2[i] = 1.0 / t.cosh();
    }
    let sigma = log_sigma.map(f64::exp);
    Ok(Predictors {
        mu1,
        mu2,
        sigma,
        rho,
        log_sigma,
        sqrt_1m_rho2,
        corr_predictor: t_raw,
        clamped,
    })
}

fn check_density_domain(mu1: f64, mu2: f64, sigma: f64, rho: f64) -> Result<()> {
    if !(mu1.is_finite() && mu2.is_finite() && sigma.is_finite() && rho.is_finite()) {
        return Err(Error::Domain("non-finite density parameter".into()));
    }
    if sigma <= 0.0 {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    if rho.abs() >= 1.0 {
        return Err(Error::Domain(format!("|rho| must be below 1, got {rho}")));
    }
    Ok(())
}

/// Density of the outcome conditional on selection,
/// f(y | U = 1) = φ(z)·Φ(ζ) / (σ·Φ(μ₂)) with z = (y-μ₁)/σ and
/// ζ = (μ₂ + ρz)/√(1-ρ²).
pub fn cond_density(y: f64, mu1: f64, mu2: f64, sigma: f64, rho: f64) -> Result<f64> {
    check_density_domain(mu1, mu2, sigma, rho)?;
    if !y.is_finite() {
        return Err(Error::Domain("non-finite outcome value".into()));
    }
    let z = (y - mu1) / sigma;
    let zeta = (mu2 + rho * z) / (1.0 - rho * rho).sqrt();
    Ok((log_norm_pdf(z) - sigma.ln() + log_norm_cdf(zeta) - log_norm_cdf(mu2)).exp())
}

/// Log-likelihood: Σᵢ uᵢ{log Φ(ζᵢ) + log φ(zᵢ) - log σᵢ} + Σᵢ (1-uᵢ) log Φ(-μ₂ᵢ).
pub fn loglik(theta: &Theta, data: &Dataset) -> Result<f64> {
    let pr = predictors(theta, data)?;
    let y = data.y();
    let u = data.u();
    let terms: Vec<f64> = (0..data.n())
        .map(|i| {
            if u[i] {
                let z = (y[i] - pr.mu1[i]) / pr.sigma[i];
                let zeta = (pr.mu2[i] + pr.rho[i] * z) / pr.sqrt_1m_rho2[i];
                log_norm_cdf(zeta) + log_norm_pdf(z) - pr.log_sigma[i]
            } else {
                log_norm_cdf(-pr.mu2[i])
            }
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Analytic gradient of [`loglik`], laid out as (β, γ, λ, κ).
///
/// Selected observations contribute through z, ζ and the inverse Mills ratio
/// m = φ(ζ)/Φ(ζ); censored ones only through the γ block:
///   ∂ℓᵢ/∂β  = uᵢ{zᵢ - m·ρᵢ/√(1-ρᵢ²)}·xᵢ/σᵢ
///   ∂ℓᵢ/∂γ  = {uᵢ·m/√(1-ρᵢ²) - (1-uᵢ)·φ(μ₂ᵢ)/Φ(-μ₂ᵢ)}·wᵢ
///   ∂ℓᵢ/∂λ  = uᵢ{(zᵢ²-1) - m·ρᵢzᵢ/√(1-ρᵢ²)}·eᵢ
///   ∂ℓᵢ/∂κ  = uᵢ·m·(zᵢ + ρᵢμ₂ᵢ)/√(1-ρᵢ²)·vᵢ
pub fn score(theta: &Theta, data: &Dataset) -> Result<DVector<f64>> {
    let pr = predictors(theta, data)?;
    let y = data.y();
    let u = data.u();
    let n = data.n();
    let mut c_beta = DVector::zeros(n);
    let mut c_gamma = DVector::zeros(n);
    let mut c_lambda = DVector::zeros(n);
    let mut c_kappa = DVector::zeros(n);
    for i in 0..n {
        if u[i] {
            let sigma = pr.sigma[i];
            let rho = pr.rho[i];
            let sq = pr.sqrt_1m_rho2[i];
            let z = (y[i] - pr.mu1[i]) / sigma;
            let zeta = (pr.mu2[i] + rho * z) / sq;
            let m = inv_mills(zeta);
            c_beta[i] = (z - m * rho / sq) / sigma;
            c_gamma[i] = m / sq;
            c_lambda[i] = (z * z - 1.0) - m * rho * z / sq;
            // Past the clamp the likelihood no longer responds to κ.
            c_kappa[i] = if pr.corr_predictor[i].abs() > CORR_PREDICTOR_CLAMP {
                0.0
            } else {
                m * (z + rho * pr.mu2[i]) / sq
            };
        } else {
            c_gamma[i] = -inv_mills(-pr.mu2[i]);
        }
    }
    let layout = theta.layout();
    let mut out = DVector::zeros(layout.dim());
    let mut write = |range: std::ops::Range<usize>, v: DVector<f64>| {
        for (k, idx) in range.enumerate() {
            out[idx] = v[k];
        }
    };
    write(layout.block_range(Block::Beta), data.x().tr_mul(&c_beta));
    write(layout.block_range(Block::Gamma), data.w().tr_mul(&c_gamma));
    write(layout.block_range(Block::Lambda), data.e().tr_mul(&c_lambda));
    write(layout.block_range(Block::Kappa), data.v().tr_mul(&c_kappa));
    Ok(out)
}

/// Hessian of [`loglik`] by central finite differences of the analytic
/// score, symmetrized as (H + Hᵀ)/2.
pub fn hessian(theta: &Theta, data: &Dataset) -> Result<DMatrix<f64>> {
    check_theta_dims(theta, data)?;
    let layout = theta.layout();
    let dim = layout.dim();
    let flat = theta.flatten();
    let mut h = DMatrix::zeros(dim, dim);
    let mut point = flat.clone();
    for j in 0..dim {
        let step = fd_step(flat[j]);
        point[j] = flat[j] + step;
        let sp = score(&Theta::from_flat(layout, &point)?, data)?;
        point[j] = flat[j] - step;
        let sm = score(&Theta::from_flat(layout, &point)?, data)?;
        point[j] = flat[j];
        h.set_column(j, &((sp - sm) / (2.0 * step)));
    }
    let ht = h.transpose();
    Ok((h + ht) * 0.5)
}

/// Closed-form β-block of the Hessian,
/// ∂²ℓᵢ/∂β∂β' = -{ρᵢ²/(1-ρᵢ²)·[ζᵢm(ζᵢ) + m²(ζᵢ)] + 1}·uᵢ·xᵢxᵢ'/σᵢ²,
/// kept as an independent cross-check on the finite-difference matrix.
pub fn hessian_beta_block(theta: &Theta, data: &Dataset) -> Result<DMatrix<f64>> {
    let pr = predictors(theta, data)?;
    let y = data.y();
    let u = data.u();
    let n = data.n();
    let mut d = DVector::zeros(n);
    for i in 0..n {
        if u[i] {
            let sigma = pr.sigma[i];
            let rho = pr.rho[i];
            let sq = pr.sqrt_1m_rho2[i];
            let z = (y[i] - pr.mu1[i]) / sigma;
            let zeta = (pr.mu2[i] + rho * z) / sq;
            let m = inv_mills(zeta);
            let r2 = (rho / sq) * (rho / sq);
            d[i] = -(r2 * (zeta * m + m * m) + 1.0) / (sigma * sigma);
        }
    }
    let mut scaled = data.x().clone();
    for i in 0..n {
        for j in 0..scaled.ncols() {
            scaled[(i, j)] *= d[i];
        }
    }
    Ok(data.x().tr_mul(&scaled))
}

/// Closed-form conditional moments of the selected part of the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalMoments {
    /// E(Y | U = 1) = μ₁ + ρσ·φ(μ₂)/Φ(μ₂)
    pub e_y_given_sel: f64,
    /// E(Z | U = 1) = ρ·φ(μ₂)/Φ(μ₂)
    pub e_z_given_sel: f64,
    /// E(Z² | U = 1) = 1 - μ₂ρ²·φ(μ₂)/Φ(μ₂)
    pub e_z2_given_sel: f64,
    /// E(φ(ζ)/Φ(ζ) | U = 1) = √(1-ρ²)·φ(μ₂)/Φ(μ₂)
    pub e_mills_given_sel: f64,
    /// E(ζφ(ζ)/Φ(ζ) | U = 1) = μ₂(1-ρ²)·φ(μ₂)/Φ(μ₂)
    ///
    /// The sign follows from φ(z)φ(ζ) = φ(μ₂)·√(1-ρ²)·N(z; -ρμ₂, 1-ρ²) and
    /// is the one that balances the information identity; it is validated
    /// against quadrature of the conditional density.
    pub e_zeta_mills_given_sel: f64,
}

pub fn conditional_moments(
    mu1: f64,
    mu2: f64,
    sigma: f64,
    rho: f64,
) -> Result<ConditionalMoments> {
    check_density_domain(mu1, mu2, sigma, rho)?;
    let mills = inv_mills(mu2);
    let one_m_r2 = 1.0 - rho * rho;
    Ok(ConditionalMoments {
        e_y_given_sel: mu1 + rho * sigma * mills,
        e_z_given_sel: rho * mills,
        e_z2_given_sel: 1.0 - mu2 * rho * rho * mills,
        e_mills_given_sel: one_m_r2.sqrt() * mills,
        e_zeta_mills_given_sel: mu2 * one_m_r2 * mills,
    })
}
