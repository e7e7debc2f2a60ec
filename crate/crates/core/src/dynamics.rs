use crate::bounds::{self, AssumptionReport};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::problem::WeightedProblem;
use crate::rng::{rng_at, seek_iteration, trajectory_rng};
use crate::weighting::{Draw, Sampler, WeightingScheme};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    Constant { alpha: f64 },
    /// α_k = α / k
    Harmonic { alpha: f64 },
    Explicit { steps: Vec<f64> },
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = |a: f64| a.is_finite() && a > 0.0;
        let good = match self {
            Self::Constant { alpha } | Self::Harmonic { alpha } => ok(*alpha),
            Self::Explicit { steps } => !steps.is_empty() && steps.iter().all(|a| ok(*a)),
        };
        if good {
            Ok(())
        } else {
            Err(Error::InvalidSchedule(format!("{self:?}: step sizes must be finite and > 0")))
        }
    }

    /// α_k for k >= 1.
    pub fn value(&self, k: usize) -> Result<f64> {
        if k == 0 {
            return Err(Error::InvalidSchedule("iterations are counted from k = 1".into()));
        }
        match self {
            Self::Constant { alpha } => Ok(*alpha),
            Self::Harmonic { alpha } => Ok(alpha / k as f64),
            Self::Explicit { steps } => steps
                .get(k - 1)
                .copied()
                .ok_or(Error::ScheduleExhausted { k, len: steps.len() }),
        }
    }

    /// α_1, ..., α_K.
    pub fn values(&self, k_max: usize) -> Result<Vec<f64>> {
        (1..=k_max).map(|k| self.value(k)).collect()
    }

    /// sup of α_k over 1..=K (K = 0 is treated as 1).
    pub fn sup(&self, k_max: usize) -> Result<f64> {
        match self {
            Self::Constant { alpha } | Self::Harmonic { alpha } => Ok(*alpha),
            Self::Explicit { .. } => Ok(self
                .values(k_max.max(1))?
                .into_iter()
                .fold(0.0, f64::max)),
        }
    }

    /// Σ_{ℓ=1}^{k} α_ℓ
    pub fn partial_sum(&self, k: usize) -> Result<f64> {
        match self {
            Self::Constant { alpha } => Ok(alpha * k as f64),
            _ => Ok(self.values(k)?.iter().sum()),
        }
    }

    /// Whether Σα_k = ∞. A finite explicit list never qualifies.
    pub fn sum_diverges(&self) -> bool {
        !matches!(self, Self::Explicit { .. })
    }

    pub fn constant_alpha(&self) -> Option<f64> {
        match self {
            Self::Constant { alpha } => Some(*alpha),
            _ => None,
        }
    }
}

/// X in row-major order plus Y: the data a single step touches.
#[derive(Debug, Clone)]
pub struct StepKernel {
    n: usize,
    d: usize,
    rows: Vec<f64>,
    y: Vec<f64>,
}

impl StepKernel {
    pub fn new(x: &Matrix, y: &Vector) -> Result<Self> {
        let (n, d) = x.shape();
        if y.len() != n {
            return Err(Error::dims("step kernel labels", n, y.len()));
        }
        let mut rows = Vec::with_capacity(n * d);
        for i in 0..n {
            rows.extend(x.row(i).iter());
        }
        Ok(Self {
            n,
            d,
            rows,
            y: y.iter().copied().collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn with_labels(&self, y: &[f64]) -> Self {
        assert_eq!(y.len(), self.n);
        Self {
            y: y.to_vec(),
            ..self.clone()
        }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    fn residual(&self, i: usize, w: &[f64]) -> f64 {
        let mut s = 0.0;
        for (a, b) in self.row(i).iter().zip(w) {
            s += a * b;
        }
        self.y[i] - s
    }

    /// w ← w + αXᵀD²(Y − Xw). `grad` is scratch of length d.
    pub fn step(&self, w: &mut [f64], alpha: f64, draw: Draw<'_>, grad: &mut [f64]) {
        match draw {
            Draw::Single(i) => {
                let c = self.residual(i, w);
                for (wj, xj) in w.iter_mut().zip(self.row(i)) {
                    *wj += alpha * (c * xj);
                }
            }
            Draw::Dense(dw) => {
                grad.fill(0.0);
                for (i, &di) in dw.iter().enumerate() {
                    if di == 0.0 {
                        continue;
                    }
                    let c = di * di * self.residual(i, w);
                    for (g, xj) in grad.iter_mut().zip(self.row(i)) {
                        *g += c * xj;
                    }
                }
                for (wj, g) in w.iter_mut().zip(grad.iter()) {
                    *wj += alpha * g;
                }
            }
        }
    }
}

/// (I − αXᵀD²X)w + αXᵀD²Y with D = diag(d).
pub fn weighted_step(w: &Vector, x: &Matrix, y: &Vector, alpha: f64, d: &Vector) -> Result<Vector> {
    if w.len() != x.ncols() {
        return Err(Error::dims("weighted_step iterate", x.ncols(), w.len()));
    }
    if d.len() != x.nrows() {
        return Err(Error::dims("weighted_step weights", x.nrows(), d.len()));
    }
    let kernel = StepKernel::new(x, y)?;
    let mut out: Vec<f64> = w.iter().copied().collect();
    let mut grad = vec![0.0; x.ncols()];
    kernel.step(&mut out, alpha, Draw::Dense(d.as_slice()), &mut grad);
    Ok(Vector::from_vec(out))
}

/// Plain gradient descent step on the unweighted data of `wp`.
pub fn full_batch_step(w: &Vector, wp: &WeightedProblem, alpha: f64) -> Result<Vector> {
    if !(alpha > 0.0 && alpha * wp.norm_xx < 1.0) {
        return Err(Error::AssumptionViolated {
            name: bounds::STEP_BELOW_INVERSE_NORM.into(),
            detail: format!("alpha * ||X^T X|| = {} must be < 1", alpha * wp.norm_xx),
        });
    }
    let ones = Vector::from_element(wp.n(), 1.0);
    weighted_step(w, wp.x(), wp.y(), alpha, &ones)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub enforce_assumptions: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            enforce_assumptions: true,
        }
    }
}

/// Stored iterates ŵ_k for the k listed in `ks` (ks[0] = 1 is the start).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub ks: Vec<usize>,
    pub iterates: Vec<Vector>,
    /// α_1..α_K
    pub alphas: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
    pub schedule: StepSchedule,
    pub scheme_id: String,
}

impl TrajectoryRecord {
    pub fn last(&self) -> &Vector {
        self.iterates.last().expect("record always holds w1")
    }
}

/// Above this horizon only a logarithmic grid of iterates is kept.
pub const FULL_STORAGE_LIMIT: usize = 100_000;

fn keep(k: usize, horizon: usize) -> bool {
    if horizon <= FULL_STORAGE_LIMIT + 1 || k <= 1000 || k == horizon {
        return true;
    }
    // roughly 100 points per decade
    let lk = (k as f64).log10() * 100.0;
    let prev = ((k - 1) as f64).log10() * 100.0;
    lk.floor() != prev.floor()
}

/// Check the guards a run needs; errors only if `opts` asks for enforcement.
pub fn guard_run(
    wp: &WeightedProblem,
    scheme: &WeightingScheme,
    schedule: &StepSchedule,
    w1: &Vector,
    k_max: usize,
    opts: RunOptions,
) -> Result<AssumptionReport> {
    if scheme.n() != wp.n() {
        return Err(Error::dims("weighting scheme", wp.n(), scheme.n()));
    }
    if w1.len() != wp.d() {
        return Err(Error::dims("initial iterate", wp.d(), w1.len()));
    }
    schedule.validate()?;
    if k_max > 0 {
        schedule.value(k_max)?;
    }
    let report = bounds::assumption_check(wp, scheme, schedule, w1, k_max)?;
    if opts.enforce_assumptions {
        report.require(&[bounds::STEP_BELOW_INVERSE_NORM, bounds::INIT_ORTHOGONAL, bounds::M2_NONSINGULAR])?;
    }
    Ok(report)
}

/// Run K steps from `w`, calling `visit(k, ŵ_k)` for k = 1..=K+1.
pub fn drive(
    kernel: &StepKernel,
    sampler: &Sampler,
    alphas: &[f64],
    w: &mut [f64],
    seed: u64,
    stream: u64,
    mut visit: impl FnMut(usize, &[f64]),
) {
    let mut rng = trajectory_rng(seed, stream);
    let mut buf = vec![0.0; kernel.n()];
    let mut grad = vec![0.0; kernel.d()];
    visit(1, w);
    for (idx, &alpha) in alphas.iter().enumerate() {
        let k = idx + 1;
        seek_iteration(&mut rng, k as u64);
        let draw = sampler.draw(&mut rng, &mut buf);
        kernel.step(w, alpha, draw, &mut grad);
        visit(k + 1, w);
    }
}

/// The diagonal of D_k used at iteration k of trajectory `stream`.
pub fn weights_at(scheme: &WeightingScheme, seed: u64, stream: u64, k: usize) -> Result<Vector> {
    let sampler = Sampler::new(scheme)?;
    let mut rng = rng_at(seed, stream, k as u64);
    let mut buf = vec![0.0; scheme.n()];
    let draw = sampler.draw(&mut rng, &mut buf);
    let mut out = vec![0.0; scheme.n()];
    match draw {
        Draw::Single(i) => out[i] = 1.0,
        Draw::Dense(d) => out.copy_from_slice(d),
    }
    Ok(Vector::from_vec(out))
}

#[allow(clippy::too_many_arguments)]
pub fn run_trajectory(
    wp: &WeightedProblem,
    scheme: &WeightingScheme,
    schedule: &StepSchedule,
    w1: &Vector,
    k_max: usize,
    seed: u64,
    opts: RunOptions,
) -> Result<TrajectoryRecord> {
    run_trajectory_stream(wp, scheme, schedule, w1, k_max, seed, 0, opts)
}

#[allow(clippy::too_many_arguments)]
pub fn run_trajectory_stream(
    wp: &WeightedProblem,
    scheme: &WeightingScheme,
    schedule: &StepSchedule,
    w1: &Vector,
    k_max: usize,
    seed: u64,
    stream: u64,
    opts: RunOptions,
) -> Result<TrajectoryRecord> {
    guard_run(wp, scheme, schedule, w1, k_max, opts)?;
    let kernel = StepKernel::new(wp.x(), wp.y())?;
    let sampler = Sampler::new(scheme)?;
    let alphas = schedule.values(k_max)?;
    let mut w: Vec<f64> = w1.iter().copied().collect();
    let mut ks = Vec::new();
    let mut iterates = Vec::new();
    let horizon = k_max + 1;
    drive(&kernel, &sampler, &alphas, &mut w, seed, stream, |k, wk| {
        if keep(k, horizon) {
            ks.push(k);
            iterates.push(Vector::from_column_slice(wk));
        }
    });
    Ok(TrajectoryRecord {
        ks,
        iterates,
        alphas,
        seed,
        stream,
        schedule: schedule.clone(),
        scheme_id: scheme.name(),
    })
}

/// Two trajectories driven by the same sequence D_1, D_2, ...
#[allow(clippy::too_many_arguments)]
pub fn run_coupled_pair(
    wp: &WeightedProblem,
    scheme: &WeightingScheme,
    schedule: &StepSchedule,
    u1: &Vector,
    v1: &Vector,
    k_max: usize,
    seed: u64,
    opts: RunOptions,
) -> Result<(TrajectoryRecord, TrajectoryRecord)> {
    let a = run_trajectory_stream(wp, scheme, schedule, u1, k_max, seed, 0, opts)?;
    let b = run_trajectory_stream(wp, scheme, schedule, v1, k_max, seed, 0, opts)?;
    Ok((a, b))
}
