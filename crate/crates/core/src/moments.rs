//! Exact first and second moments of ŵ_k − ŵ over the weighting randomness.
//!
//! m_{k+1} = (I − α_k𝕏̂)m_k and A_{k+1} = S_{α_k}(A_k) + ρ_k, where
//! S_α(A) = (I−α𝕏̂)A(I−α𝕏̂) + α²Xᵀ(Σ_D ⊙ (XAXᵀ + rrᵀ))X and
//! ρ_k = −α_k²Xᵀ(Σ_D ⊙ (Xm_krᵀ + rm_kᵀXᵀ))X.

use crate::bounds;
use crate::dynamics::StepSchedule;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::problem::WeightedProblem;
use crate::weighting::WeightingMoments;

#[derive(Debug, Clone, PartialEq)]
pub struct MomentContext {
    pub x: Matrix,
    pub xx_hat: Matrix,
    pub sigma_d: Matrix,
    pub residual: Vector,
    pub w_hat: Vector,
    pub kernel_projector: Matrix,
    pub schedule: StepSchedule,
    /// σ_min⁺(𝕏̂)
    pub sigma: f64,
    pub norm_x: f64,
    pub norm_xx: f64,
    pub norm_xx_hat: f64,
    pub norm_sigma_d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub k: usize,
    pub m: Vector,
    pub a: Matrix,
}

impl MomentContext {
    pub fn new(wp: &WeightedProblem, moments: &WeightingMoments, schedule: StepSchedule) -> Result<Self> {
        let n = wp.n();
        if moments.m2_diag.len() != n || moments.sigma_d.shape() != (n, n) {
            return Err(Error::dims("weighting moments", n, moments.m2_diag.len()));
        }
        let scale = wp.m2_diag.amax().max(1.0);
        if (&moments.m2_diag - &wp.m2_diag).amax() > 1e-12 * scale {
            return Err(Error::InvalidInput(
                "weighting moments do not match the E[D^2] used to build the problem".into(),
            ));
        }
        schedule.validate()?;
        Ok(Self {
            x: wp.x().clone(),
            xx_hat: wp.xx_hat.clone(),
            sigma_d: moments.sigma_d.clone(),
            residual: wp.residual.clone(),
            w_hat: wp.w_hat.clone(),
            kernel_projector: wp.kernel_projector.clone(),
            schedule,
            sigma: wp.sigma_min_plus_xx_hat,
            norm_x: wp.norm_x,
            norm_xx: wp.norm_xx,
            norm_xx_hat: wp.norm_xx_hat,
            norm_sigma_d: crate::linalg::spectral_norm(&moments.sigma_d)?,
        })
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn with_schedule(&self, schedule: StepSchedule) -> Result<Self> {
        schedule.validate()?;
        Ok(Self {
            schedule,
            ..self.clone()
        })
    }

    /// The largest constant step for which the limit theory applies:
    /// σ / (σ² + ‖X‖⁴‖Σ_D‖).
    pub fn variance_step_bound(&self) -> f64 {
        self.sigma / (self.sigma * self.sigma + self.norm_x.powi(4) * self.norm_sigma_d)
    }

    fn alpha(&self, k: usize) -> Result<f64> {
        self.schedule.value(k)
    }

    /// The constant step, checked against the variance step bound.
    pub fn limit_alpha(&self) -> Result<f64> {
        let alpha = self.schedule.constant_alpha().ok_or_else(|| {
            Error::NotApplicable("limit computations need a constant step size".into())
        })?;
        self.check_variance_bound(alpha)?;
        Ok(alpha)
    }

    pub(crate) fn check_variance_bound(&self, alpha: f64) -> Result<()> {
        let bound = self.variance_step_bound();
        if alpha < bound {
            Ok(())
        } else {
            Err(Error::StepBound { alpha, bound })
        }
    }

    fn step_matrix(&self, alpha: f64) -> Matrix {
        Matrix::identity(self.d(), self.d()) - &self.xx_hat * alpha
    }

    /// α²Xᵀ(Σ_D ⊙ B)X
    fn sandwich(&self, b: &Matrix, alpha: f64) -> Matrix {
        let inner = self.sigma_d.component_mul(b);
        (self.x.transpose() * inner * &self.x) * (alpha * alpha)
    }
}

fn symmetrize(a: Matrix) -> Matrix {
    (&a + a.transpose()) * 0.5
}

pub fn first_moment_step(m: &Vector, ctx: &MomentContext, k: usize) -> Result<Vector> {
    let alpha = ctx.alpha(k)?;
    Ok(m - (&ctx.xx_hat * m) * alpha)
}

/// S^lin_α(A) = (I−α𝕏̂)A(I−α𝕏̂) + α²Xᵀ(Σ_D ⊙ XAXᵀ)X
pub fn apply_s_lin(a: &Matrix, ctx: &MomentContext, alpha: f64) -> Matrix {
    let l = ctx.step_matrix(alpha);
    let xax = &ctx.x * a * ctx.x.transpose();
    symmetrize(&l * a * &l + ctx.sandwich(&xax, alpha))
}

/// S^int_α = α²Xᵀ(Σ_D ⊙ rrᵀ)X
pub fn s_int(ctx: &MomentContext, alpha: f64) -> Matrix {
    s_int_with(ctx, &(&ctx.residual * ctx.residual.transpose()), alpha)
}

/// Intercept with rrᵀ replaced by a given outer-product matrix (e.g. E[rrᵀ]).
pub fn s_int_with(ctx: &MomentContext, rr: &Matrix, alpha: f64) -> Matrix {
    symmetrize(ctx.sandwich(rr, alpha))
}

pub fn apply_s(a: &Matrix, ctx: &MomentContext, k: usize) -> Result<Matrix> {
    if !a.is_square() || a.nrows() != ctx.d() {
        return Err(Error::dims("second moment", ctx.d(), a.nrows()));
    }
    let alpha = ctx.alpha(k)?;
    Ok(apply_s_lin(a, ctx, alpha) + s_int(ctx, alpha))
}

pub fn remainder_rho(m: &Vector, ctx: &MomentContext, k: usize) -> Result<Matrix> {
    let alpha = ctx.alpha(k)?;
    let xm = &ctx.x * m;
    let cross = &xm * ctx.residual.transpose();
    let b = &cross + cross.transpose();
    Ok(symmetrize(-ctx.sandwich(&b, alpha)))
}

/// Exact (m_k, A_k) for k = 1..=K+1 from the deterministic start m_1 = w_1 − ŵ.
pub fn propagate(ctx: &MomentContext, m1: &Vector, k_max: usize) -> Result<Vec<MomentState>> {
    if m1.len() != ctx.d() {
        return Err(Error::dims("initial moment", ctx.d(), m1.len()));
    }
    let sup = ctx.schedule.sup(k_max)?;
    if sup * ctx.norm_xx_hat >= 1.0 {
        return Err(Error::AssumptionViolated {
            name: bounds::STEP_BELOW_INVERSE_NORM.into(),
            detail: format!("sup alpha * ||XX_hat|| = {}", sup * ctx.norm_xx_hat),
        });
    }
    let off = (&ctx.kernel_projector * m1).norm();
    if off > 1e-10 * m1.norm().max(1.0) {
        return Err(Error::AssumptionViolated {
            name: bounds::INIT_ORTHOGONAL.into(),
            detail: format!("kernel component of w1 - w_hat is {off:e}"),
        });
    }
    let mut states = Vec::with_capacity(k_max + 1);
    let mut m = m1.clone();
    let mut a = m1 * m1.transpose();
    states.push(MomentState {
        k: 1,
        m: m.clone(),
        a: a.clone(),
    });
    for k in 1..=k_max {
        let rho = remainder_rho(&m, ctx, k)?;
        a = apply_s(&a, ctx, k)? + rho;
        m = first_moment_step(&m, ctx, k)?;
        states.push(MomentState {
            k: k + 1,
            m: m.clone(),
            a: a.clone(),
        });
    }
    Ok(states)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stationary {
    pub matrix: Matrix,
    pub terms: usize,
    /// ‖M − S^lin(M) − S^int‖ (spectral)
    pub fixed_point_residual: f64,
}

pub const DEFAULT_STATIONARY_TOL: f64 = 1e-12;

/// Σ_ℓ (S^lin_α)^ℓ (S^int_α), the limit of A_k for constant steps.
pub fn stationary_second_moment(ctx: &MomentContext, tol: f64) -> Result<Matrix> {
    Ok(stationary_detail(ctx, tol)?.matrix)
}

pub fn stationary_detail(ctx: &MomentContext, tol: f64) -> Result<Stationary> {
    let alpha = ctx.limit_alpha()?;
    let intercept = s_int(ctx, alpha);
    neumann(ctx, alpha, intercept, tol)
}

/// Same series with a caller-supplied outer product in place of rrᵀ.
pub fn stationary_with_outer(ctx: &MomentContext, rr: &Matrix, tol: f64) -> Result<Stationary> {
    let alpha = ctx.limit_alpha()?;
    let intercept = s_int_with(ctx, rr, alpha);
    neumann(ctx, alpha, intercept, tol)
}

fn neumann(ctx: &MomentContext, alpha: f64, intercept: Matrix, tol: f64) -> Result<Stationary> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("stationary tolerance must be > 0".into()));
    }
    let rate = alpha * ctx.sigma;
    let stop = tol * rate;
    let start = intercept.norm();
    let expected = if start > stop {
        ((start / stop).ln() / rate).ceil() as usize
    } else {
        0
    };
    let cap = 2 * expected + 1000;
    let mut total = intercept.clone();
    let mut term = intercept.clone();
    let mut terms = 1;
    while term.norm() > stop {
        if terms > cap {
            return Err(Error::NotApplicable(format!(
                "Neumann series did not reach tolerance after {cap} terms"
            )));
        }
        term = apply_s_lin(&term, ctx, alpha);
        total += &term;
        terms += 1;
    }
    let fp = &total - apply_s_lin(&total, ctx, alpha) - &intercept;
    let fixed_point_residual = crate::linalg::spectral_norm(&fp)?;
    if fixed_point_residual > 10.0 * tol {
        return Err(Error::NotApplicable(format!(
            "stationary moment fixed-point residual {fixed_point_residual:e} exceeds {:e}",
            10.0 * tol
        )));
    }
    Ok(Stationary {
        matrix: total,
        terms,
        fixed_point_residual,
    })
}

/// 1 − α·σ_min⁺(𝕏̂)
pub fn s_lin_contraction_factor(ctx: &MomentContext) -> Result<f64> {
    let alpha = ctx.schedule.sup(1)?;
    ctx.check_variance_bound(alpha)?;
    Ok(1.0 - alpha * ctx.sigma)
}
