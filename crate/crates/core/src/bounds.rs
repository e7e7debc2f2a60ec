//! Closed-form guards, rates and constants.

use crate::dynamics::StepSchedule;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::moments::{self, MomentContext};
use crate::problem::{build_weighted_problem, WeightedProblem};
use crate::weighting::WeightingScheme;
use serde::Serialize;
use std::collections::BTreeMap;

pub const STEP_BELOW_INVERSE_NORM: &str = "step_below_inverse_weighted_norm";
pub const STEP_SUM_DIVERGES: &str = "step_sum_diverges";
pub const INIT_ORTHOGONAL: &str = "init_orthogonal_to_kernel";
pub const M2_NONSINGULAR: &str = "m2_nonsingular";
pub const VARIANCE_STEP_BOUND: &str = "variance_step_bound";
pub const COMPACT_SUPPORT_STEP: &str = "compact_support_step";

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    /// Distance to the boundary, positive when passing; absent for rule-based checks.
    pub margin: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn passed(&self, name: &str) -> bool {
        self.get(name).is_some_and(|c| c.passed)
    }

    /// First failing check among `names`, as an error.
    pub fn require(&self, names: &[&str]) -> Result<()> {
        for name in names {
            match self.get(name) {
                Some(c) if c.passed => {}
                Some(c) => {
                    return Err(Error::AssumptionViolated {
                        name: c.name.clone(),
                        detail: c.detail.clone(),
                    })
                }
                None => {
                    return Err(Error::AssumptionViolated {
                        name: name.to_string(),
                        detail: "not evaluated".into(),
                    })
                }
            }
        }
        Ok(())
    }

    fn push(&mut self, name: &str, passed: bool, margin: Option<f64>, detail: String) {
        self.checks.push(AssumptionCheck {
            name: name.into(),
            passed,
            margin,
            detail,
        });
    }
}

pub fn assumption_check(
    wp: &WeightedProblem,
    scheme: &WeightingScheme,
    schedule: &StepSchedule,
    w1: &Vector,
    k_max: usize,
) -> Result<AssumptionReport> {
    let mut rep = AssumptionReport::default();
    let sup = schedule.sup(k_max)?;

    let prod = sup * wp.norm_xx_hat;
    rep.push(
        STEP_BELOW_INVERSE_NORM,
        prod < 1.0,
        Some(1.0 - prod),
        format!("sup alpha * ||X^T M2 X|| = {prod:.6e} (needs < 1)"),
    );

    rep.push(
        STEP_SUM_DIVERGES,
        schedule.sum_diverges(),
        None,
        match schedule {
            StepSchedule::Explicit { .. } => "a finite explicit schedule has a finite sum".into(),
            _ => "constant and harmonic schedules are not summable".into(),
        },
    );

    let off = wp.kernel_component(w1);
    let tol = 1e-10 * w1.norm().max(1.0);
    rep.push(
        INIT_ORTHOGONAL,
        off <= tol,
        Some(tol - off),
        format!("kernel component of w1 is {off:.3e}"),
    );

    let moments = scheme.analytic_moments();
    let m2 = moments.as_ref().map_or(&wp.m2_diag, |m| &m.m2_diag);
    let m2_min = m2.iter().copied().fold(f64::INFINITY, f64::min);
    rep.push(
        M2_NONSINGULAR,
        m2_min > 0.0,
        Some(m2_min),
        format!("smallest E[D^2] entry {m2_min:.6e}"),
    );

    let matches = m2.len() == wp.n() && (m2 - &wp.m2_diag).amax() <= 1e-12 * wp.m2_diag.amax().max(1.0);
    match moments {
        Some(mom) if matches => {
            let ctx = MomentContext::new(wp, &mom, schedule.clone())?;
            let bound = ctx.variance_step_bound();
            rep.push(
                VARIANCE_STEP_BOUND,
                sup < bound,
                Some(bound - sup),
                format!("sup alpha = {sup:.6e}, bound sigma/(sigma^2 + ||X||^4 ||Sigma_D||) = {bound:.6e}"),
            );
        }
        Some(_) => rep.push(
            VARIANCE_STEP_BOUND,
            false,
            None,
            "the problem was built with a different E[D^2] than this scheme has".into(),
        ),
        None => rep.push(
            VARIANCE_STEP_BOUND,
            false,
            None,
            "no closed-form moments for this scheme".into(),
        ),
    }

    match (schedule.constant_alpha(), scheme.tau().tau()) {
        (Some(alpha), Some(tau)) => {
            let v = alpha * tau * tau * wp.norm_xx;
            rep.push(
                COMPACT_SUPPORT_STEP,
                v < 2.0,
                Some(2.0 - v),
                format!("alpha * tau^2 * ||X^T X|| = {v:.6e} (needs < 2), tau = {tau}"),
            );
        }
        (None, _) => rep.push(
            COMPACT_SUPPORT_STEP,
            false,
            None,
            "requires a constant step size".into(),
        ),
        (_, None) => rep.push(
            COMPACT_SUPPORT_STEP,
            false,
            None,
            "weights have unbounded support".into(),
        ),
    }
    Ok(rep)
}

fn guard_sup(schedule: &StepSchedule, k: usize, norm: f64) -> Result<()> {
    let sup = schedule.sup(k)?;
    if sup * norm < 1.0 {
        Ok(())
    } else {
        Err(Error::AssumptionViolated {
            name: STEP_BELOW_INVERSE_NORM.into(),
            detail: format!("sup alpha * norm = {}", sup * norm),
        })
    }
}

/// exp(−σ_min⁺(𝕏)Σ_{ℓ≤k}α_ℓ)·‖w1 − X⁺Y‖₂ for plain gradient descent.
pub fn gd_rate_bound(wp: &WeightedProblem, schedule: &StepSchedule, k: usize, w1: &Vector) -> Result<f64> {
    if !wp.is_identity_weighting() {
        return Err(Error::NotApplicable("gd_rate_bound needs the unweighted problem".into()));
    }
    guard_sup(schedule, k, wp.norm_xx)?;
    let s = schedule.partial_sum(k)?;
    Ok((-wp.sigma_min_plus_xx * s).exp() * (w1 - &wp.w_hat).norm())
}

/// exp(−σ_min⁺(𝕏̂)Σ_{ℓ≤k}α_ℓ)·‖w1 − ŵ‖₂, a bound on ‖E[ŵ_{k+1}] − ŵ‖₂.
pub fn mean_rate_bound(ctx: &MomentContext, k: usize, w1: &Vector) -> Result<f64> {
    guard_sup(&ctx.schedule, k, ctx.norm_xx_hat)?;
    let s = ctx.schedule.partial_sum(k)?;
    Ok((-ctx.sigma * s).exp() * (w1 - &ctx.w_hat).norm())
}

/// Lower and upper bounds on ζ(s), s > 1, from a partial sum plus integral tails.
pub fn zeta_bounds(s: f64) -> Result<(f64, f64)> {
    if !(s > 1.0 && s.is_finite()) {
        return Err(Error::InvalidInput(format!("zeta needs s > 1, got {s}")));
    }
    const N: usize = 200_000;
    let mut partial = 0.0;
    for n in (1..=N).rev() {
        partial += (n as f64).powf(-s);
    }
    let n = N as f64;
    let upper = partial + n.powf(1.0 - s) / (s - 1.0);
    let lower = partial + (n + 1.0).powf(1.0 - s) / (s - 1.0);
    Ok((lower, upper))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarConstants {
    pub c0: f64,
    /// Harmonic schedules only.
    pub c1: Option<f64>,
    /// Constant schedules only.
    pub c2: Option<f64>,
    pub stationary_norm: Option<f64>,
}

pub fn var_constants(ctx: &MomentContext, w1: &Vector) -> Result<VarConstants> {
    let alpha = ctx.schedule.sup(1)?;
    ctx.check_variance_bound(alpha)?;
    let e = (w1 - &ctx.w_hat).norm();
    let r = ctx.residual.norm();
    let c0 = e * e + 2.0 * ctx.norm_x.powi(3) * ctx.norm_sigma_d * e * r;
    let mut out = VarConstants {
        c0,
        c1: None,
        c2: None,
        stationary_norm: None,
    };
    match &ctx.schedule {
        StepSchedule::Harmonic { alpha } => {
            let a = alpha * ctx.sigma;
            let (_, zeta) = zeta_bounds(2.0 - a)?;
            let c1 = c0 * (1.0 + alpha * std::f64::consts::PI.powi(2) / 6.0)
                + ctx.norm_x.powi(2) * ctx.norm_sigma_d * r * r * (a * EULER_GAMMA).exp() * alpha * zeta;
            out.c1 = Some(c1);
        }
        StepSchedule::Constant { .. } => {
            let st = moments::stationary_second_moment(ctx, moments::DEFAULT_STATIONARY_TOL)?;
            let norm = linalg::spectral_norm(&st)?;
            out.c2 = Some(c0 + norm);
            out.stationary_norm = Some(norm);
        }
        StepSchedule::Explicit { .. } => {}
    }
    Ok(out)
}

/// C₂(2 + kα²)exp(−ασ(k − 1)), bounding ‖A_{k+1} − M‖.
pub fn constant_step_envelope(c2: f64, alpha: f64, sigma: f64, k: usize) -> f64 {
    let k = k as f64;
    c2 * (2.0 + k * alpha * alpha) * (-alpha * sigma * (k - 1.0)).exp()
}

/// C₁k^{−ασ}, bounding ‖A_{k+1}‖ for α_k = α/k.
pub fn harmonic_envelope(c1: f64, alpha: f64, sigma: f64, k: usize) -> f64 {
    c1 * (k as f64).powf(-alpha * sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GmcRate {
    /// Bound on r_q^q.
    pub rq_pow_q: f64,
    pub rq: f64,
}

/// r_q^q ≤ 1 − α(2 − ατ²‖𝕏‖)σ_min⁺(𝕏̂)
pub fn gmc_rate(wp: &WeightedProblem, alpha: f64, tau: f64, q: f64) -> Result<GmcRate> {
    if !(q >= 1.0) {
        return Err(Error::InvalidInput(format!("q = {q} must be >= 1")));
    }
    let v = alpha * tau * tau * wp.norm_xx;
    if !(alpha > 0.0 && v < 2.0) {
        return Err(Error::AssumptionViolated {
            name: COMPACT_SUPPORT_STEP.into(),
            detail: format!("alpha * tau^2 * ||X^T X|| = {v} (needs < 2)"),
        });
    }
    let p = (1.0 - alpha * (2.0 - v) * wp.sigma_min_plus_xx_hat).max(0.0);
    Ok(GmcRate {
        rq_pow_q: p,
        rq: p.powf(1.0 / q),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointBudget {
    pub alpha_max: f64,
    pub k_min: f64,
}

/// Step size and iteration count after which the iterates are within ε of a
/// point mass at ŵ. `c3` is the (unknown in closed form) GMC constant.
pub fn conv_point_budget(ctx: &MomentContext, tau: f64, epsilon: f64, c3: f64) -> Result<PointBudget> {
    let r = ctx.residual.norm();
    if r <= 1e-10 * ctx.w_hat.norm().max(1.0) {
        return Err(Error::NotApplicable(
            "realizable case: the iterates collapse to a point mass at w_hat".into(),
        ));
    }
    if !(epsilon > 0.0 && c3 > 0.0) {
        return Err(Error::InvalidInput("epsilon and C3 must be > 0".into()));
    }
    let d = ctx.d() as f64;
    let alpha_max = ctx.sigma * epsilon * epsilon / (d * ctx.norm_sigma_d * ctx.norm_xx * r);
    let alpha = ctx.schedule.sup(1)?;
    let v = alpha * tau * tau * ctx.norm_xx;
    if v >= 2.0 {
        return Err(Error::AssumptionViolated {
            name: COMPACT_SUPPORT_STEP.into(),
            detail: format!("alpha * tau^2 * ||X^T X|| = {v} (needs < 2)"),
        });
    }
    let k = 2.0 * (2.0 * c3 / epsilon).ln() / (alpha * (2.0 - v) * ctx.sigma);
    Ok(PointBudget {
        alpha_max,
        k_min: k.max(1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskBounds {
    pub lower: f64,
    pub upper: f64,
    /// ‖(I − X⁺X)w*‖²
    pub bias: f64,
    /// Tr(PΣ_εPᵀ), P = X̂⁺M₂^{1/2}
    pub variance: f64,
    /// Tr((I − XP)Σ_ε(I − XP)ᵀ)
    pub misfit: f64,
    /// ‖X‖ before normalisation; 1 means no rescaling happened.
    pub scale: f64,
}

/// Limit-risk sandwich, evaluated after rescaling so that ‖X‖ = 1.
pub fn asym_risk_bounds(wp: &WeightedProblem, w_star: &Vector, sigma_eps: &Matrix) -> Result<RiskBounds> {
    let n = wp.n();
    if w_star.len() != wp.d() {
        return Err(Error::dims("ground truth", wp.d(), w_star.len()));
    }
    if sigma_eps.shape() != (n, n) {
        return Err(Error::dims("noise covariance", n, sigma_eps.nrows()));
    }
    if !linalg::is_symmetric(sigma_eps, 1e-12) {
        return Err(Error::InvalidInput("noise covariance is not symmetric".into()));
    }
    let scale_eps = sigma_eps.amax().max(1.0);
    if linalg::min_eigenvalue_sym(sigma_eps) < -1e-12 * scale_eps {
        return Err(Error::InvalidInput("noise covariance is not positive semi-definite".into()));
    }
    let s = wp.norm_x;
    let (wp_unit, sigma) = if (s - 1.0).abs() > 1e-12 {
        let ds = wp.dataset.rescaled(s);
        (build_weighted_problem(ds, &wp.m2_diag)?, sigma_eps / (s * s))
    } else {
        (wp.clone(), sigma_eps.clone())
    };
    let bias = (&wp_unit.kernel_projector * w_star).norm_squared();
    let p = wp_unit.solution_map();
    let variance = (&p * &sigma * p.transpose()).trace();
    let q = Matrix::identity(n, n) - wp_unit.x() * &p;
    let misfit = (&q * &sigma * q.transpose()).trace();
    Ok(RiskBounds {
        lower: bias + variance,
        upper: bias + variance + misfit,
        bias,
        variance,
        misfit,
        scale: s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Speedup {
    pub ratio: f64,
    pub bound: f64,
}

/// Gain in effective inverse condition number σ_min⁺/‖·‖ from weighting.
pub fn condition_speedup(wp_uniform: &WeightedProblem, wp_weighted: &WeightedProblem) -> Result<Speedup> {
    if wp_uniform.x() != wp_weighted.x() {
        return Err(Error::InvalidInput("condition_speedup needs the same design matrix".into()));
    }
    let base = wp_uniform.sigma_min_plus_xx / wp_uniform.norm_xx;
    let weighted = wp_weighted.sigma_min_plus_xx_hat / wp_weighted.norm_xx_hat;
    let ratio = weighted / base;
    let hi = wp_weighted.m2_diag.iter().copied().fold(0.0, f64::max);
    let lo = wp_weighted.m2_diag.iter().copied().fold(f64::INFINITY, f64::min);
    let bound = hi / lo;
    if ratio > bound + 1e-9 {
        return Err(Error::InvalidInput(format!(
            "speed-up ratio {ratio} exceeds max/min weight ratio {bound}"
        )));
    }
    Ok(Speedup { ratio, bound })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceCeiling {
    /// α‖𝕏‖‖Σ_D‖‖r‖²/σ_min⁺(𝕏̂)
    pub ceiling: f64,
    /// ‖X‖²‖Σ_D‖‖r‖²/(σ² + ‖X‖⁴‖Σ_D‖)
    pub step_free: f64,
    /// ‖r‖²/‖X‖²
    pub residual_level: f64,
}

pub fn variance_ceiling(ctx: &MomentContext) -> Result<VarianceCeiling> {
    let alpha = ctx.limit_alpha()?;
    let r2 = ctx.residual.norm_squared();
    let sd = ctx.norm_sigma_d;
    let x2 = ctx.norm_x * ctx.norm_x;
    Ok(VarianceCeiling {
        ceiling: alpha * ctx.norm_xx * sd * r2 / ctx.sigma,
        step_free: x2 * sd * r2 / (ctx.sigma * ctx.sigma + x2 * x2 * sd),
        residual_level: r2 / x2,
    })
}

/// Upper envelope for E‖ŵ_k − ŵ‖² along a run, built from whichever bounds
/// apply: the constant-step or harmonic second-moment rates (needs closed-form
/// moments and the variance step bound) and, in the realizable case, the
/// coupled contraction towards the fixed point ŵ.
#[derive(Debug, Clone, PartialEq)]
pub struct SqDistanceEnvelope {
    start: f64,
    rank: f64,
    alpha: f64,
    sigma: f64,
    stationary_trace: f64,
    c1: Option<f64>,
    c2: Option<f64>,
    contraction: Option<f64>,
}

impl SqDistanceEnvelope {
    pub fn new(wp: &WeightedProblem, scheme: &WeightingScheme, schedule: &StepSchedule, w1: &Vector) -> Result<Self> {
        let start = (w1 - &wp.w_hat).norm_squared();
        let mut env = Self {
            start,
            rank: wp.rank as f64,
            alpha: schedule.sup(1)?,
            sigma: wp.sigma_min_plus_xx_hat,
            stationary_trace: 0.0,
            c1: None,
            c2: None,
            contraction: None,
        };
        if wp.kernel_component(w1) > 1e-10 * w1.norm().max(1.0) {
            return Ok(env);
        }
        if let Some(mom) = scheme.analytic_moments() {
            let matches = (&mom.m2_diag - &wp.m2_diag).amax() <= 1e-12 * wp.m2_diag.amax().max(1.0);
            if matches && env.alpha * wp.norm_xx_hat < 1.0 {
                let ctx = MomentContext::new(wp, &mom, schedule.clone())?;
                if env.alpha < ctx.variance_step_bound() {
                    let c = var_constants(&ctx, w1)?;
                    env.c1 = c.c1;
                    env.c2 = c.c2;
                    if c.c2.is_some() {
                        env.stationary_trace = moments::stationary_second_moment(&ctx, moments::DEFAULT_STATIONARY_TOL)?.trace();
                    }
                }
            }
        }
        let realizable = wp.residual.norm() <= 1e-10 * wp.y().norm().max(1.0);
        if let (true, Some(alpha), Some(tau)) = (realizable, schedule.constant_alpha(), scheme.tau().tau()) {
            if let Ok(g) = gmc_rate(wp, alpha, tau, 2.0) {
                env.contraction = Some(g.rq_pow_q);
            }
        }
        Ok(env)
    }

    pub fn is_available(&self) -> bool {
        self.c1.is_some() || self.c2.is_some() || self.contraction.is_some()
    }

    /// Envelope at iterate k ≥ 1 (k = 1 is the start), `None` when no bound applies.
    pub fn at(&self, k: usize) -> Option<f64> {
        if k <= 1 {
            return Some(self.start);
        }
        let j = k - 1;
        let mut best: Option<f64> = None;
        let mut offer = |v: f64| {
            if v.is_finite() {
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        };
        if let Some(c2) = self.c2 {
            offer(self.stationary_trace + self.rank * constant_step_envelope(c2, self.alpha, self.sigma, j));
        }
        if let Some(c1) = self.c1 {
            offer(self.rank * harmonic_envelope(c1, self.alpha, self.sigma, j));
        }
        if let Some(r) = self.contraction {
            offer(r.powi(j as i32) * self.start);
        }
        best
    }
}

/// Serialisable summary of one bound with its inputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub name: String,
    pub values: BTreeMap<String, f64>,
    pub inputs: BTreeMap<String, f64>,
    pub assumptions: Vec<AssumptionCheck>,
    pub valid: bool,
}

impl BoundReport {
    pub fn new(name: &str, assumptions: Vec<AssumptionCheck>) -> Self {
        let valid = assumptions.iter().all(|c| c.passed);
        Self {
            name: name.into(),
            values: BTreeMap::new(),
            inputs: BTreeMap::new(),
            assumptions,
            valid,
        }
    }

    pub fn value(mut self, key: &str, v: f64) -> Self {
        self.values.insert(key.into(), v);
        self
    }

    pub fn input(mut self, key: &str, v: f64) -> Self {
        self.inputs.insert(key.into(), v);
        self
    }

    pub fn invalid(mut self) -> Self {
        self.valid = false;
        self
    }
}

/// The spectral inputs every report echoes.
pub fn inputs_digest(ctx: &MomentContext) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert("sigma_min_plus_xx_hat".into(), ctx.sigma);
    m.insert("norm_x".into(), ctx.norm_x);
    m.insert("norm_xx".into(), ctx.norm_xx);
    m.insert("norm_xx_hat".into(), ctx.norm_xx_hat);
    m.insert("norm_sigma_d".into(), ctx.norm_sigma_d);
    m.insert("residual_norm".into(), ctx.residual.norm());
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::problem::build_unweighted_problem;

    fn v(x: &[f64]) -> Vector {
        Vector::from_row_slice(x)
    }

    fn unit_problem() -> WeightedProblem {
        build_unweighted_problem(Dataset::new(Matrix::identity(2, 2), v(&[1.0, 1.0])).unwrap()).unwrap()
    }

    #[test]
    fn assumption_examples() {
        let wp = build_unweighted_problem(
            Dataset::new(Matrix::from_row_slice(3, 2, &[1.0, 0.2, 0.3, 1.0, 0.5, 0.5]), v(&[1.0, 0.0, 2.0])).unwrap(),
        )
        .unwrap();
        let id = WeightingScheme::Identity { n: 3 };
        let w1 = v(&[0.0, 0.0]);
        let half = StepSchedule::Constant { alpha: 0.5 / wp.norm_xx };
        assert!(assumption_check(&wp, &id, &half, &w1, 10).unwrap().all_passed());
        let harm = StepSchedule::Harmonic { alpha: 0.5 / wp.norm_xx };
        assert!(assumption_check(&wp, &id, &harm, &w1, 10).unwrap().passed(STEP_SUM_DIVERGES));
        let big = StepSchedule::Constant { alpha: 2.0 / wp.norm_xx_hat };
        let rep = assumption_check(&wp, &id, &big, &w1, 10).unwrap();
        let c = rep.get(STEP_BELOW_INVERSE_NORM).unwrap();
        assert!(!c.passed && (c.margin.unwrap() + 1.0).abs() < 1e-12);
        let expl = StepSchedule::Explicit { steps: vec![0.1] };
        assert!(!assumption_check(&wp, &id, &expl, &w1, 1).unwrap().passed(STEP_SUM_DIVERGES));
    }

    #[test]
    fn gd_rate_examples() {
        let wp = unit_problem();
        let s = StepSchedule::Constant { alpha: 0.5 };
        assert_eq!(gd_rate_bound(&wp, &s, 5, &wp.w_hat.clone()).unwrap(), 0.0);
        let w1 = &wp.w_hat + v(&[1.0, 0.0]);
        assert!((gd_rate_bound(&wp, &s, 2, &w1).unwrap() - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(gd_rate_bound(&wp, &s, 0, &w1).unwrap(), 1.0);
    }

    #[test]
    fn mean_rate_examples() {
        let wp = unit_problem();
        let scheme = WeightingScheme::Categorical { p: vec![0.5, 0.5] };
        let mom = scheme.analytic_moments().unwrap();
        let wpw = build_weighted_problem(wp.dataset.clone(), &mom.m2_diag).unwrap();
        let ctx = MomentContext::new(&wpw, &mom, StepSchedule::Constant { alpha: 0.5 }).unwrap();
        assert_eq!(mean_rate_bound(&ctx, 3, &wpw.w_hat.clone()).unwrap(), 0.0);
        let w1 = &wpw.w_hat + v(&[0.0, 2.0]);
        // σ = 0.5, Σα = 2 ⇒ e^{-1}·2
        assert!((mean_rate_bound(&ctx, 4, &w1).unwrap() - 2.0 * (-1f64).exp()).abs() < 1e-15);
        assert_eq!(mean_rate_bound(&ctx, 0, &w1).unwrap(), 2.0);
    }

    #[test]
    fn gmc_examples() {
        let wp = unit_problem();
        let g = gmc_rate(&wp, 0.5, 1.0, 2.0).unwrap();
        assert!((g.rq_pow_q - 0.25).abs() < 1e-15 && (g.rq - 0.5).abs() < 1e-15);
        assert!((gmc_rate(&wp, 1e-12, 1.0, 2.0).unwrap().rq_pow_q - 1.0).abs() < 1e-11);
        let edge = gmc_rate(&wp, 1.0 - 5e-10, 2f64.sqrt(), 2.0).unwrap();
        assert!(edge.rq_pow_q >= 0.0 && edge.rq_pow_q < 1.0);
        assert!(gmc_rate(&wp, 2.5, 1.0, 2.0).is_err());
    }

    #[test]
    fn zeta_brackets_known_value() {
        let (lo, hi) = zeta_bounds(2.0).unwrap();
        let z2 = std::f64::consts::PI.powi(2) / 6.0;
        assert!(lo <= z2 + 1e-13 && z2 <= hi + 1e-13 && hi - lo < 1e-9);
    }

    #[test]
    fn speedup_examples() {
        let wp = unit_problem();
        let ds = wp.dataset.clone();
        let half = build_weighted_problem(ds.clone(), &v(&[0.5, 0.5])).unwrap();
        assert!((condition_speedup(&wp, &half).unwrap().ratio - 1.0).abs() < 1e-15);
        let w = build_weighted_problem(ds, &v(&[4.0, 1.0])).unwrap();
        let s = condition_speedup(&wp, &w).unwrap();
        assert!((s.ratio - 0.25).abs() < 1e-15);
        assert_eq!(s.bound, 4.0);

        let rank_one = Dataset::new(Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]), v(&[0.0, 0.0])).unwrap();
        let u = build_unweighted_problem(rank_one.clone()).unwrap();
        let w = build_weighted_problem(rank_one, &v(&[0.9, 0.1])).unwrap();
        assert!((condition_speedup(&u, &w).unwrap().ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn point_budget_examples() {
        let mut ctx = {
            let wp = unit_problem();
            let mom = WeightingScheme::Identity { n: 2 }.analytic_moments().unwrap();
            MomentContext::new(&wp, &mom, StepSchedule::Constant { alpha: 0.5 }).unwrap()
        };
        ctx.residual = v(&[1.0, 0.0]);
        ctx.norm_sigma_d = 1.0;
        let b = conv_point_budget(&ctx, 1.0, 0.1, 1.0).unwrap();
        assert!((b.alpha_max - 0.005).abs() < 1e-15);
        let b2 = conv_point_budget(&ctx, 1.0, 0.2, 1.0).unwrap();
        assert!((b2.alpha_max / b.alpha_max - 4.0).abs() < 1e-12);
        assert_eq!(conv_point_budget(&ctx, 1.0, 100.0, 1.0).unwrap().k_min, 1.0);
        ctx.residual = v(&[0.0, 0.0]);
        assert!(matches!(conv_point_budget(&ctx, 1.0, 0.1, 1.0), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn risk_examples() {
        // orthonormal columns, M₂ ∝ I, Σ_ε = I ⇒ lower = d
        let x = Matrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let ds = Dataset::new(x, v(&[0.0, 0.0, 0.0])).unwrap();
        let wp = build_weighted_problem(ds, &v(&[0.3, 0.3, 0.3])).unwrap();
        let r = asym_risk_bounds(&wp, &v(&[1.0, -2.0]), &Matrix::identity(3, 3)).unwrap();
        assert!((r.lower - 2.0).abs() < 1e-13 && r.bias.abs() < 1e-13);

        let x = Matrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let ds = Dataset::new(x, v(&[1.0])).unwrap();
        let wp = build_unweighted_problem(ds).unwrap();
        let r = asym_risk_bounds(&wp, &v(&[1.0, 1.0]), &Matrix::zeros(1, 1)).unwrap();
        let proj = Matrix::identity(2, 2) - Matrix::from_row_slice(2, 2, &[9.0, 12.0, 12.0, 16.0]) / 25.0;
        let bias = (proj * v(&[1.0, 1.0])).norm_squared();
        assert!((r.lower - bias).abs() < 1e-13 && (r.upper - bias).abs() < 1e-13);
        assert_eq!(r.scale, 5.0);

        assert!(asym_risk_bounds(&wp, &v(&[1.0, 1.0]), &Matrix::from_element(1, 1, -1.0)).is_err());
    }

    #[test]
    fn variance_ceiling_realizable_is_zero() {
        let wp = unit_problem();
        let scheme = WeightingScheme::Categorical { p: vec![0.5, 0.5] };
        let mom = scheme.analytic_moments().unwrap();
        let wpw = build_weighted_problem(wp.dataset, &mom.m2_diag).unwrap();
        let ctx = MomentContext::new(&wpw, &mom, StepSchedule::Constant { alpha: 0.1 }).unwrap();
        assert_eq!(variance_ceiling(&ctx).unwrap().ceiling, 0.0);
    }

    #[test]
    fn c0_examples() {
        let wp = unit_problem();
        let scheme = WeightingScheme::Categorical { p: vec![0.5, 0.5] };
        let mom = scheme.analytic_moments().unwrap();
        let wpw = build_weighted_problem(wp.dataset, &mom.m2_diag).unwrap();
        let ctx = MomentContext::new(&wpw, &mom, StepSchedule::Constant { alpha: 0.1 }).unwrap();
        assert_eq!(var_constants(&ctx, &wpw.w_hat.clone()).unwrap().c0, 0.0);
        let id = WeightingScheme::Identity { n: 2 }.analytic_moments().unwrap();
        let wpi = build_unweighted_problem(Dataset::new(Matrix::identity(2, 2), v(&[1.0, 1.0])).unwrap()).unwrap();
        let ctx = MomentContext::new(&wpi, &id, StepSchedule::Constant { alpha: 0.1 }).unwrap();
        let w1 = v(&[0.0, 3.0]);
        let e = (&w1 - &wpi.w_hat).norm_squared();
        assert!((var_constants(&ctx, &w1).unwrap().c0 - e).abs() < 1e-14);
    }

    #[test]
    fn sq_distance_envelope_dominates_exact_trace() {
        let ds = Dataset::new(Matrix::from_row_slice(3, 2, &[1.0, 0.3, 0.2, 0.9, 0.6, 0.6]) / 2.0, v(&[1.0, -1.0, 0.4])).unwrap();
        let scheme = WeightingScheme::Categorical { p: vec![0.3, 0.3, 0.4] };
        let mom = scheme.analytic_moments().unwrap();
        let wp = build_weighted_problem(ds, &mom.m2_diag).unwrap();
        let probe = MomentContext::new(&wp, &mom, StepSchedule::Constant { alpha: 0.1 }).unwrap();
        let alpha = 0.8 * probe.variance_step_bound();
        let w1 = v(&[0.0, 0.0]);
        for schedule in [StepSchedule::Constant { alpha }, StepSchedule::Harmonic { alpha }] {
            let env = SqDistanceEnvelope::new(&wp, &scheme, &schedule, &w1).unwrap();
            assert!(env.is_available());
            let ctx = MomentContext::new(&wp, &mom, schedule).unwrap();
            let states = moments::propagate(&ctx, &(&w1 - &wp.w_hat), 500).unwrap();
            for s in &states {
                assert!(s.a.trace() <= env.at(s.k).unwrap() * (1.0 + 1e-12), "k = {}", s.k);
            }
        }
    }
}
