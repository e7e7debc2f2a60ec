//! Ensembles, the exhaustive enumeration oracle, and risk estimation.
//!
//! Trajectories run in fixed-size chunks; each chunk accumulates with
//! compensated sums and chunks are merged in index order, so results do not
//! depend on the number of threads.

use crate::bounds::{self, COMPACT_SUPPORT_STEP, VARIANCE_STEP_BOUND};
use crate::dynamics::{drive, guard_run, RunOptions, StepKernel, StepSchedule};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::moments::{self, MomentContext, MomentState};
use crate::problem::{build_weighted_problem, WeightedProblem};
use crate::rng::{rng_at, seek_iteration, trajectory_rng};
use crate::weighting::{Draw, Sampler, WeightingScheme};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

const CHUNK: usize = 128;
const CHUNKS_PER_BATCH: usize = 32;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &Neumaier) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Streaming mean and variance; chunks combine with the pairwise update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let (na, nb) = (self.n as f64, other.n as f64);
        self.mean += delta * nb / n as f64;
        self.m2 += other.m2 + delta * delta * na * nb / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; NaN below two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            f64::NAN
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn standard_error(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }
}

fn merge_all(into: &mut [Neumaier], from: &[Neumaier]) {
    for (a, b) in into.iter_mut().zip(from) {
        a.merge(b);
    }
}

/// Run `n_items` independent jobs in deterministic chunks and fold their accumulators.
fn chunked<A, F, G>(n_items: usize, init: impl Fn() -> A + Sync, work: F, mut merge: G) -> A
where
    A: Send,
    F: Fn(&mut A, usize) + Sync,
    G: FnMut(&mut A, A),
{
    let n_chunks = n_items.div_ceil(CHUNK);
    let mut total = init();
    let mut start = 0;
    while start < n_chunks {
        let end = (start + CHUNKS_PER_BATCH).min(n_chunks);
        let parts: Vec<A> = (start..end)
            .into_par_iter()
            .map(|c| {
                let mut acc = init();
                for i in c * CHUNK..((c + 1) * CHUNK).min(n_items) {
                    work(&mut acc, i);
                }
                acc
            })
            .collect();
        for p in parts {
            merge(&mut total, p);
        }
        start = end;
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub k_max: usize,
    pub n_traj: usize,
    pub seed: u64,
    /// k = 1..=K+1
    pub ks: Vec<usize>,
    /// Sample mean of ŵ_k − ŵ.
    pub mean_error: Vec<Vector>,
    pub mean_error_norm: Vec<f64>,
    /// Sample mean of (ŵ_k − ŵ)(ŵ_k − ŵ)ᵀ; empty unless requested.
    pub second_moment: Vec<Matrix>,
    /// Sample mean of ‖ŵ_k − ŵ‖².
    pub sq_distance: Vec<f64>,
    /// Standard errors of `sq_distance` (NaN for a single trajectory).
    pub standard_errors: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleOptions {
    pub run: RunOptions,
    pub second_moment: bool,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            run: RunOptions::default(),
            second_moment: true,
        }
    }
}

struct EnsembleAcc {
    mean: Vec<Neumaier>,
    outer: Vec<Neumaier>,
    sq: Vec<Welford>,
}

fn merge_welford(into: &mut [Welford], from: &[Welford]) {
    for (a, b) in into.iter_mut().zip(from) {
        a.merge(b);
    }
}

#[allow(clippy::too_many_arguments)]
pub fn ensemble_moments(
    wp: &WeightedProblem,
    scheme: &WeightingScheme,
    schedule: &StepSchedule,
    w1: &Vector,
    k_max: usize,
    n_traj: usize,
    seed: u64,
    opts: EnsembleOptions,
) -> Result<EnsembleSummary> {
    if n_traj == 0 {
        return Err(Error::InvalidInput("an ensemble needs at least one trajectory".into()));
    }
    guard_run(wp, scheme, schedule, w1, k_max, opts.run)?;
    let kernel = StepKernel::new(wp.x(), wp.y())?;
    let sampler = Sampler::new(scheme)?;
    let alphas = schedule.values(k_max)?;
    let d = wp.d();
    let levels = k_max + 1;
    let w_hat: Vec<f64> = wp.w_hat.iter().copied().collect();
    let outer_len = if opts.second_moment { levels * d * d } else { 0 };

    let acc = chunked(
        n_traj,
        || EnsembleAcc {
            mean: vec![Neumaier::default(); levels * d],
            outer: vec![Neumaier::default(); outer_len],
            sq: vec![Welford::default(); levels],
        },
        |acc, i| {
            let mut w: Vec<f64> = w1.iter().copied().collect();
            let mut e = vec![0.0; d];
            drive(&kernel, &sampler, &alphas, &mut w, seed, i as u64, |k, wk| {
                let lvl = k - 1;
                let mut s = 0.0;
                for j in 0..d {
                    e[j] = wk[j] - w_hat[j];
                    s += e[j] * e[j];
                    acc.mean[lvl * d + j].add(e[j]);
                }
                if opts.second_moment {
                    let base = lvl * d * d;
                    for a in 0..d {
                        for b in 0..d {
                            acc.outer[base + a * d + b].add(e[a] * e[b]);
                        }
                    }
                }
                acc.sq[lvl].push(s);
            });
        },
        |total, part| {
            merge_all(&mut total.mean, &part.mean);
            merge_all(&mut total.outer, &part.outer);
            merge_welford(&mut total.sq, &part.sq);
        },
    );

    let nf = n_traj as f64;
    let mut summary = EnsembleSummary {
        k_max,
        n_traj,
        seed,
        ks: (1..=levels).collect(),
        mean_error: Vec::with_capacity(levels),
        mean_error_norm: Vec::with_capacity(levels),
        second_moment: Vec::new(),
        sq_distance: Vec::with_capacity(levels),
        standard_errors: Vec::with_capacity(levels),
        warnings: Vec::new(),
    };
    if n_traj == 1 {
        summary.warnings.push("a single trajectory leaves the standard error undefined".into());
    }
    for lvl in 0..levels {
        let m = Vector::from_iterator(d, (0..d).map(|j| acc.mean[lvl * d + j].value() / nf));
        summary.mean_error_norm.push(m.norm());
        summary.mean_error.push(m);
        if opts.second_moment {
            let base = lvl * d * d;
            summary.second_moment.push(Matrix::from_fn(d, d, |a, b| acc.outer[base + a * d + b].value() / nf));
        }
        summary.sq_distance.push(acc.sq[lvl].mean());
        summary.standard_errors.push(acc.sq[lvl].standard_error());
    }
    Ok(summary)
}

/// W₂(μ, δ_c): root mean squared distance to the centre.
pub fn w2_to_point_mass(samples: &[Vector], center: &Vector) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples".into()));
    }
    let mut acc = Neumaier::default();
    for s in samples {
        if s.len() != center.len() {
            return Err(Error::dims("w2 sample", center.len(), s.len()));
        }
        acc.add((s - center).norm_squared());
    }
    Ok((acc.value() / samples.len() as f64).sqrt())
}

/// Final iterates ŵ_{K+1} of `n` independent trajectories (streams 0..n).
#[allow(clippy::too_many_arguments)]
pub fn final_iterates(
    wp: &WeightedProblem,
    scheme: &WeightingScheme,
    schedule: &StepSchedule,
    w1: &Vector,
    k_max: usize,
    n: usize,
    seed: u64,
    opts: RunOptions,
) -> Result<Vec<Vector>> {
    guard_run(wp, scheme, schedule, w1, k_max, opts)?;
    let kernel = StepKernel::new(wp.x(), wp.y())?;
    let sampler = Sampler::new(scheme)?;
    let alphas = schedule.values(k_max)?;
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut w: Vec<f64> = w1.iter().copied().collect();
            drive(&kernel, &sampler, &alphas, &mut w, seed, i as u64, |_, _| {});
            Vector::from_vec(w)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmcEstimate {
    /// (mean ‖u_k − v_k‖^q)^{1/q} for k = 1..=K+1.
    pub moment: Vec<f64>,
    /// Delta-method standard errors of `moment`.
    pub se: Vec<f64>,
}

/// Coupled pairs sharing their weight sequence; pair i uses stream i.
#[allow(clippy::too_many_arguments)]
pub fn gmc_contraction_estimate(
    wp: &WeightedProblem,
    scheme: &WeightingScheme,
    alpha: f64,
    u1: &Vector,
    v1: &Vector,
    k_max: usize,
    q: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<GmcEstimate> {
    if n_pairs == 0 {
        return Err(Error::InvalidInput("need at least one pair".into()));
    }
    if u1.len() != wp.d() || v1.len() != wp.d() {
        return Err(Error::dims("coupled starts", wp.d(), u1.len().max(v1.len())));
    }
    let tau = scheme.tau().tau().ok_or_else(|| Error::AssumptionViolated {
        name: COMPACT_SUPPORT_STEP.into(),
        detail: "weights have unbounded support".into(),
    })?;
    bounds::gmc_rate(wp, alpha, tau, q)?;
    let kernel = StepKernel::new(wp.x(), wp.y())?;
    let sampler = Sampler::new(scheme)?;
    let d = wp.d();
    let levels = k_max + 1;
    let acc = chunked(
        n_pairs,
        || vec![Welford::default(); levels],
        |acc, i| {
            let mut u: Vec<f64> = u1.iter().copied().collect();
            let mut v: Vec<f64> = v1.iter().copied().collect();
            let mut rng = trajectory_rng(seed, i as u64);
            let mut buf = vec![0.0; kernel.n()];
            let mut grad = vec![0.0; d];
            let mut record = |lvl: usize, u: &[f64], v: &[f64]| {
                let dist: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                acc[lvl].push(dist.powf(q));
            };
            record(0, &u, &v);
            for k in 1..=k_max {
                seek_iteration(&mut rng, k as u64);
                let draw = sampler.draw(&mut rng, &mut buf);
                kernel.step(&mut u, alpha, draw, &mut grad);
                kernel.step(&mut v, alpha, draw, &mut grad);
                record(k, &u, &v);
            }
        },
        |total, part| merge_welford(total, &part),
    );
    let mut moment = Vec::with_capacity(levels);
    let mut se = Vec::with_capacity(levels);
    for w in acc.iter().take(levels) {
        let (m, s) = (w.mean(), w.standard_error());
        let root = m.powf(1.0 / q);
        moment.push(root);
        // d/dm m^{1/q} = m^{1/q - 1}/q
        se.push(if m > 0.0 { s * root / (q * m) } else { 0.0 });
    }
    Ok(GmcEstimate { moment, se })
}

/// Exact (m_k, A_k) by summing over every weight sequence of length ≤ K.
pub fn enumeration_oracle(
    wp: &WeightedProblem,
    scheme: &WeightingScheme,
    schedule: &StepSchedule,
    w1: &Vector,
    k_max: usize,
    max_outcomes: u128,
) -> Result<Vec<MomentState>> {
    if scheme.n() != wp.n() || w1.len() != wp.d() {
        return Err(Error::dims("enumeration oracle", wp.n(), scheme.n()));
    }
    let support = scheme
        .support()
        .ok_or_else(|| Error::NotApplicable(format!("{} has no finite support", scheme.name())))?;
    let size = support.len() as u128;
    let required = (0..k_max).try_fold(1u128, |acc, _| acc.checked_mul(size)).unwrap_or(u128::MAX);
    if required > max_outcomes {
        return Err(Error::BudgetExceeded {
            required,
            cap: max_outcomes,
        });
    }
    let alphas = schedule.values(k_max)?;
    let kernel = StepKernel::new(wp.x(), wp.y())?;
    let d = wp.d();
    let levels = k_max + 1;
    let mut mean = vec![Neumaier::default(); levels * d];
    let mut outer = vec![Neumaier::default(); levels * d * d];
    let w_hat: Vec<f64> = wp.w_hat.iter().copied().collect();

    struct Walk<'a> {
        kernel: &'a StepKernel,
        support: &'a [(f64, Vec<f64>)],
        alphas: &'a [f64],
        w_hat: &'a [f64],
        mean: &'a mut [Neumaier],
        outer: &'a mut [Neumaier],
        grad: Vec<f64>,
    }

    fn visit(walk: &mut Walk<'_>, depth: usize, w: &[f64], prob: f64) {
        let d = w.len();
        for a in 0..d {
            let ea = w[a] - walk.w_hat[a];
            walk.mean[depth * d + a].add(prob * ea);
            for b in 0..d {
                let eb = w[b] - walk.w_hat[b];
                walk.outer[depth * d * d + a * d + b].add(prob * ea * eb);
            }
        }
        if depth == walk.alphas.len() {
            return;
        }
        let alpha = walk.alphas[depth];
        for idx in 0..walk.support.len() {
            let (p, dw) = (walk.support[idx].0, &walk.support[idx].1);
            let mut next = w.to_vec();
            let mut grad = std::mem::take(&mut walk.grad);
            walk.kernel.step(&mut next, alpha, Draw::Dense(dw), &mut grad);
            walk.grad = grad;
            visit(walk, depth + 1, &next, prob * p);
        }
    }

    let mut walk = Walk {
        kernel: &kernel,
        support: &support,
        alphas: &alphas,
        w_hat: &w_hat,
        mean: &mut mean,
        outer: &mut outer,
        grad: vec![0.0; d],
    };
    let start: Vec<f64> = w1.iter().copied().collect();
    visit(&mut walk, 0, &start, 1.0);

    Ok((0..levels)
        .map(|lvl| MomentState {
            k: lvl + 1,
            m: Vector::from_iterator(d, (0..d).map(|j| mean[lvl * d + j].value())),
            a: Matrix::from_fn(d, d, |a, b| outer[lvl * d * d + a * d + b].value()),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskEstimate {
    pub mean: f64,
    pub se: f64,
    pub k_burn: usize,
    pub n_rep: usize,
}

/// Inputs shared by the risk estimators.
#[derive(Debug, Clone)]
pub struct RiskSetup<'a> {
    pub x: &'a Matrix,
    pub scheme: &'a WeightingScheme,
    pub alpha: f64,
    pub w_star: &'a Vector,
    pub sigma_eps: &'a Matrix,
    pub seed: u64,
    pub enforce_assumptions: bool,
}

impl RiskSetup<'_> {
    fn problem_with(&self, y: Vector) -> Result<WeightedProblem> {
        let mom = self
            .scheme
            .analytic_moments()
            .ok_or_else(|| Error::NotApplicable("risk estimation needs closed-form weight moments".into()))?;
        let ds = crate::data::Dataset::new(self.x.clone(), y)?;
        build_weighted_problem(ds, &mom.m2_diag)
    }

    /// Context for the noiseless labels Xw*; the residual is replaced by
    /// expectations where needed.
    fn context(&self) -> Result<(WeightedProblem, MomentContext)> {
        let wp = self.problem_with(self.x * self.w_star)?;
        let mom = self.scheme.analytic_moments().expect("checked above");
        let ctx = MomentContext::new(&wp, &mom, StepSchedule::Constant { alpha: self.alpha })?;
        Ok((wp, ctx))
    }

    /// E[rrᵀ] over the noise, and the solution map P = X̂⁺M₂^{1/2}.
    fn expected_residual_outer(&self, wp: &WeightedProblem) -> Result<(Matrix, Matrix)> {
        let n = wp.n();
        let p = wp.solution_map();
        let q = Matrix::identity(n, n) - self.x * &p;
        let signal = self.x * self.w_star;
        let rr = &q * (&signal * signal.transpose() + self.sigma_eps) * q.transpose();
        Ok((rr, p))
    }

    /// lim_k E‖w* − ŵ_k‖² in closed form: the estimator risk plus the trace
    /// of the stationary second moment averaged over the noise.
    pub fn expected_limit(&self) -> Result<f64> {
        let (wp, ctx) = self.context()?;
        let (rr, p) = self.expected_residual_outer(&wp)?;
        let stationary = moments::stationary_with_outer(&ctx, &rr, moments::DEFAULT_STATIONARY_TOL)?;
        let bias = self.w_star - &p * (self.x * self.w_star);
        Ok(bias.norm_squared() + (&p * self.sigma_eps * p.transpose()).trace() + stationary.matrix.trace())
    }

    /// Smallest k at which the constant-step envelope drops below
    /// 1e-6·(Tr E[M] + 1), using expected-noise proxies for the residual.
    pub fn default_burn_in(&self) -> Result<usize> {
        let (wp, ctx) = self.context()?;
        let (rr, p) = self.expected_residual_outer(&wp)?;
        let stationary = moments::stationary_with_outer(&ctx, &rr, moments::DEFAULT_STATIONARY_TOL)?;
        let r = rr.trace().max(0.0).sqrt();
        let mean_hat = &p * (self.x * self.w_star);
        let e = (mean_hat.norm_squared() + (&p * self.sigma_eps * p.transpose()).trace()).sqrt();
        let c0 = e * e + 2.0 * ctx.norm_x.powi(3) * ctx.norm_sigma_d * e * r;
        let c2 = c0 + linalg::spectral_norm(&stationary.matrix)?;
        let target = 1e-6 * (stationary.matrix.trace() + 1.0);
        let mut k = 1usize;
        while bounds::constant_step_envelope(c2, self.alpha, ctx.sigma, k) > target {
            k = k.checked_mul(2).ok_or_else(|| Error::NotApplicable("burn-in overflow".into()))?;
        }
        let (mut lo, mut hi) = (k / 2, k);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if bounds::constant_step_envelope(c2, self.alpha, ctx.sigma, mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // the envelope at k bounds ‖A_{k+1} − M‖
        Ok(hi + 1)
    }

    fn check(&self) -> Result<()> {
        let (wp, ctx) = self.context()?;
        let rep = bounds::assumption_check(
            &wp,
            self.scheme,
            &ctx.schedule,
            &Vector::zeros(wp.d()),
            1,
        )?;
        if self.enforce_assumptions {
            rep.require(&[bounds::STEP_BELOW_INVERSE_NORM, VARIANCE_STEP_BOUND])?;
        }
        Ok(())
    }
}

/// E‖w* − ŵ_k‖² over noise and weights at each k in `grid` (w₁ = 0).
pub fn risk_curve(setup: &RiskSetup<'_>, grid: &[usize], n_rep: usize) -> Result<Vec<(f64, f64)>> {
    if n_rep == 0 {
        return Err(Error::InvalidInput("n_rep must be >= 1".into()));
    }
    let x = setup.x;
    let (n, d) = x.shape();
    if setup.w_star.len() != d || setup.sigma_eps.shape() != (n, n) {
        return Err(Error::dims("risk setup", format!("d={d}, n={n}"), setup.w_star.len()));
    }
    if setup.scheme.n() != n {
        return Err(Error::dims("weighting scheme", n, setup.scheme.n()));
    }
    setup.check()?;
    let k_max = grid.iter().copied().max().unwrap_or(1).max(1);
    let alphas = vec![setup.alpha; k_max - 1];
    let root = linalg::psd_sqrt(setup.sigma_eps);
    let signal = x * setup.w_star;
    let kernel = StepKernel::new(x, &signal)?;
    let sampler = Sampler::new(setup.scheme)?;
    let w_star: Vec<f64> = setup.w_star.iter().copied().collect();
    let slots: Vec<Option<usize>> = (1..=k_max).map(|k| grid.iter().position(|&g| g == k)).collect();
    let m = grid.len();

    let acc = chunked(
        n_rep,
        || vec![Welford::default(); m],
        |acc, i| {
            let mut rng = rng_at(setup.seed, i as u64, 0);
            let z = Vector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
            let y = &signal + &root * z;
            let kern = kernel.with_labels(y.as_slice());
            let mut w = vec![0.0; d];
            drive(&kern, &sampler, &alphas, &mut w, setup.seed, i as u64, |k, wk| {
                if let Some(Some(slot)) = slots.get(k - 1) {
                    let s: f64 = wk.iter().zip(&w_star).map(|(a, b)| (a - b) * (a - b)).sum();
                    acc[*slot].push(s);
                }
            });
        },
        |total, part| merge_welford(total, &part),
    );
    Ok(acc.iter().map(|w| (w.mean(), w.standard_error())).collect())
}

/// Monte Carlo estimate of lim_k E‖w* − ŵ_k‖² after `k_burn` steps.
pub fn risk_limit_estimate(setup: &RiskSetup<'_>, k_burn: Option<usize>, n_rep: usize) -> Result<RiskEstimate> {
    let k_burn = match k_burn {
        Some(k) => k,
        None => setup.default_burn_in()?,
    };
    let (mean, se) = risk_curve(setup, &[k_burn + 1], n_rep)?[0];
    Ok(RiskEstimate {
        mean,
        se,
        k_burn,
        n_rep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::problem::build_unweighted_problem;

    fn v(x: &[f64]) -> Vector {
        Vector::from_row_slice(x)
    }

    #[test]
    fn neumaier_beats_naive() {
        let mut a = Neumaier::default();
        for x in [1.0, 1e100, 1.0, -1e100] {
            a.add(x);
        }
        assert_eq!(a.value(), 2.0);
    }

    #[test]
    fn w2_examples() {
        let c = v(&[0.0, 0.0]);
        assert_eq!(w2_to_point_mass(&[c.clone(), c.clone()], &c).unwrap(), 0.0);
        assert_eq!(w2_to_point_mass(&[v(&[1.0, 0.0]), v(&[-1.0, 0.0])], &c).unwrap(), 1.0);
        assert_eq!(w2_to_point_mass(&[v(&[3.0, 4.0])], &c).unwrap(), 5.0);
        assert!(w2_to_point_mass(&[], &c).is_err());
    }

    fn two_by_two() -> WeightedProblem {
        let ds = Dataset::new(Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]), v(&[1.0, -1.0])).unwrap();
        build_weighted_problem(ds, &v(&[0.5, 0.5])).unwrap()
    }

    #[test]
    fn identity_ensemble_has_no_spread() {
        let wp = build_unweighted_problem(two_by_two().dataset).unwrap();
        let s = StepSchedule::Constant { alpha: 0.3 };
        let e = ensemble_moments(&wp, &WeightingScheme::Identity { n: 2 }, &s, &v(&[0.0, 0.0]), 10, 5, 1, EnsembleOptions::default()).unwrap();
        for k in 0..=10 {
            assert_eq!(e.standard_errors[k], 0.0);
        }
    }

    #[test]
    fn realizable_start_at_solution_stays() {
        let wp = two_by_two();
        let s = StepSchedule::Constant { alpha: 0.3 };
        let sch = WeightingScheme::Categorical { p: vec![0.5, 0.5] };
        let e = ensemble_moments(&wp, &sch, &s, &wp.w_hat.clone(), 20, 50, 1, EnsembleOptions::default()).unwrap();
        assert!(e.sq_distance.iter().all(|x| *x < 1e-28));
    }

    #[test]
    fn oracle_budget_and_trivial_cases() {
        let wp = two_by_two();
        let s = StepSchedule::Constant { alpha: 0.3 };
        let sch = WeightingScheme::Categorical { p: vec![0.5, 0.5] };
        let err = enumeration_oracle(&wp, &sch, &s, &v(&[0.0, 0.0]), 20, 1 << 16).unwrap_err();
        assert_eq!(err, Error::BudgetExceeded { required: 1 << 20, cap: 1 << 16 });
        let w1 = v(&[0.3, 0.1]);
        let o = enumeration_oracle(&wp, &sch, &s, &w1, 0, 1 << 16).unwrap();
        let m = &w1 - &wp.w_hat;
        assert_eq!(o.len(), 1);
        assert!((&o[0].m - &m).amax() < 1e-15);
        assert!((&o[0].a - &m * m.transpose()).amax() < 1e-15);
    }

    #[test]
    fn oracle_matches_propagation_small() {
        let wp = two_by_two();
        let s = StepSchedule::Constant { alpha: 0.3 };
        let sch = WeightingScheme::Categorical { p: vec![0.5, 0.5] };
        let mom = sch.analytic_moments().unwrap();
        let ctx = MomentContext::new(&wp, &mom, s.clone()).unwrap();
        let w1 = v(&[0.0, 0.0]);
        let exact = moments::propagate(&ctx, &(&w1 - &wp.w_hat), 6).unwrap();
        let brute = enumeration_oracle(&wp, &sch, &s, &w1, 6, 1 << 16).unwrap();
        for (a, b) in exact.iter().zip(&brute) {
            assert!((&a.m - &b.m).amax() <= 1e-10);
            assert!((&a.a - &b.a).amax() <= 1e-10);
        }
    }

    #[test]
    fn gmc_identity_is_deterministic_contraction() {
        let wp = build_unweighted_problem(two_by_two().dataset).unwrap();
        let alpha = 0.4;
        let u1 = v(&[1.0, 0.0]);
        let v1 = v(&[0.0, 1.0]);
        let g = gmc_contraction_estimate(&wp, &WeightingScheme::Identity { n: 2 }, alpha, &u1, &v1, 15, 2.0, 3, 0).unwrap();
        let step = Matrix::identity(2, 2) - &wp.xx * alpha;
        let mut diff = &u1 - &v1;
        for k in 0..=15 {
            assert!((g.moment[k] - diff.norm()).abs() < 1e-12);
            diff = &step * diff;
        }
        let same = gmc_contraction_estimate(&wp, &WeightingScheme::Identity { n: 2 }, alpha, &u1, &u1, 5, 2.0, 3, 0).unwrap();
        assert!(same.moment.iter().all(|m| *m == 0.0));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let wp = two_by_two();
        let s = StepSchedule::Constant { alpha: 0.3 };
        let sch = WeightingScheme::Categorical { p: vec![0.5, 0.5] };
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| ensemble_moments(&wp, &sch, &s, &v(&[0.0, 0.0]), 30, 1000, 5, EnsembleOptions::default()).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn noiseless_risk_is_zero() {
        let x = Matrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.5, 0.5]) / 2.0;
        let sch = WeightingScheme::uniform_categorical(3);
        let w_star = v(&[1.0, -1.0]);
        let zero = Matrix::zeros(3, 3);
        let setup = RiskSetup {
            x: &x,
            scheme: &sch,
            alpha: 0.1,
            w_star: &w_star,
            sigma_eps: &zero,
            seed: 3,
            enforce_assumptions: false,
        };
        let r = risk_limit_estimate(&setup, Some(5000), 20).unwrap();
        assert!(r.mean < 1e-12, "{}", r.mean);
    }
}
