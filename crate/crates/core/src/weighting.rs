use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use rand::distr::weighted::WeightedIndex;
use rand::seq::index::sample;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use std::fmt;
use std::sync::Arc;

pub type DiagonalSampler = Arc<dyn Fn(&mut dyn RngCore, &mut [f64]) + Send + Sync>;
pub type ScalarSampler = Arc<dyn Fn(&mut dyn RngCore) -> f64 + Send + Sync>;

/// Per-coordinate law of a continuous i.i.d. weighting.
#[derive(Clone)]
pub enum ContinuousLaw {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, std: f64 },
    Laplace { location: f64, scale: f64 },
    Custom(ScalarSampler),
}

impl fmt::Debug for ContinuousLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform { low, high } => write!(f, "Uniform({low}, {high})"),
            Self::Normal { mean, std } => write!(f, "Normal({mean}, {std})"),
            Self::Laplace { location, scale } => write!(f, "Laplace({location}, {scale})"),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl ContinuousLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            Self::Normal { mean, std } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + std * z
            }
            Self::Laplace { location, scale } => {
                // inverse CDF on u in (-1/2, 1/2)
                let u = rng.random::<f64>() - 0.5;
                location - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            Self::Custom(f) => {
                let mut shim = DynRng(rng);
                f(&mut shim)
            }
        }
    }
}

struct DynRng<'a, R: ?Sized>(&'a mut R);

impl<R: Rng + ?Sized> RngCore for DynRng<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// The law of the random diagonal D.
#[derive(Clone)]
pub enum WeightingScheme {
    /// D = I.
    Identity { n: usize },
    /// One data point per step, picked with probability p_i.
    Categorical { p: Vec<f64> },
    /// Independent coin flips D_ii ~ Bernoulli(p_i).
    Bernoulli { p: Vec<f64> },
    /// D = diag(c), deterministic.
    FixedDiagonal { c: Vec<f64> },
    /// D_ii i.i.d. with declared raw moments E[W], E[W²], E[W³], E[W⁴].
    ContinuousIid {
        n: usize,
        law: ContinuousLaw,
        moments: [f64; 4],
        tau: Option<f64>,
    },
    /// Arbitrary joint law; only estimated moments are available.
    Custom {
        n: usize,
        name: String,
        sampler: DiagonalSampler,
        tau: Option<f64>,
    },
}

impl fmt::Debug for WeightingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity { n } => write!(f, "Identity(n={n})"),
            Self::Categorical { p } => write!(f, "Categorical({p:?})"),
            Self::Bernoulli { p } => write!(f, "Bernoulli({p:?})"),
            Self::FixedDiagonal { c } => write!(f, "FixedDiagonal({c:?})"),
            Self::ContinuousIid { n, law, moments, tau } => {
                write!(f, "ContinuousIid(n={n}, {law:?}, moments={moments:?}, tau={tau:?})")
            }
            Self::Custom { n, name, tau, .. } => write!(f, "Custom({name}, n={n}, tau={tau:?})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Provenance {
    Analytic,
    Estimated(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightingMoments {
    pub m2_diag: Vector,
    pub sigma_d: Matrix,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum BoundedSupport {
    Bounded(f64),
    Unbounded,
}

impl BoundedSupport {
    pub fn tau(self) -> Option<f64> {
        match self {
            Self::Bounded(t) => Some(t),
            Self::Unbounded => None,
        }
    }
}

const SIMPLEX_TOL: f64 = 1e-9;

impl WeightingScheme {
    pub fn categorical(p: Vec<f64>) -> Result<Self> {
        let s = Self::Categorical { p };
        s.validate()?;
        Ok(s)
    }

    pub fn uniform_categorical(n: usize) -> Self {
        Self::Categorical {
            p: vec![1.0 / n as f64; n],
        }
    }

    /// p_i ∝ exp(sign·‖X_i‖₂).
    pub fn norm_softmax(row_norms: &Vector, sign: f64) -> Self {
        let z: Vec<f64> = row_norms.iter().map(|r| sign * r).collect();
        let top = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - top).exp()).collect();
        let total: f64 = e.iter().sum();
        Self::Categorical {
            p: e.iter().map(|v| v / total).collect(),
        }
    }

    /// Uniformly random subset of `b` out of `n` rows per step (indicator weights).
    pub fn minibatch(n: usize, b: usize) -> Result<Self> {
        if b == 0 || b > n {
            return Err(Error::InvalidScheme(format!("batch size {b} not in 1..={n}")));
        }
        Ok(Self::Custom {
            n,
            name: format!("minibatch({b})"),
            sampler: Arc::new(move |rng: &mut dyn RngCore, out: &mut [f64]| {
                out.fill(0.0);
                for i in sample(rng, n, b).into_iter() {
                    out[i] = 1.0;
                }
            }),
            tau: Some(1.0),
        })
    }

    pub fn n(&self) -> usize {
        match self {
            Self::Identity { n } | Self::ContinuousIid { n, .. } | Self::Custom { n, .. } => *n,
            Self::Categorical { p } | Self::Bernoulli { p } => p.len(),
            Self::FixedDiagonal { c } => c.len(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Identity { .. } => "identity".into(),
            Self::Categorical { .. } => "categorical".into(),
            Self::Bernoulli { .. } => "bernoulli".into(),
            Self::FixedDiagonal { .. } => "fixed_diagonal".into(),
            Self::ContinuousIid { .. } => "continuous".into(),
            Self::Custom { name, .. } => name.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScheme(m));
        if self.n() == 0 {
            return bad("scheme must cover at least one data point".into());
        }
        match self {
            Self::Identity { .. } | Self::Custom { .. } => Ok(()),
            Self::Categorical { p } => {
                if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return bad("categorical probabilities must be finite and >= 0".into());
                }
                let total: f64 = p.iter().sum();
                if (total - 1.0).abs() > SIMPLEX_TOL {
                    return bad(format!("categorical probabilities sum to {total}, not 1"));
                }
                Ok(())
            }
            Self::Bernoulli { p } => {
                if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return bad("bernoulli probabilities must lie in [0, 1]".into());
                }
                Ok(())
            }
            Self::FixedDiagonal { c } => {
                if c.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return bad("fixed diagonal entries must be finite and >= 0".into());
                }
                Ok(())
            }
            Self::ContinuousIid { moments, tau, .. } => {
                let [m1, m2, _m3, m4] = *moments;
                if moments.iter().any(|v| !v.is_finite()) {
                    return bad("declared moments must be finite".into());
                }
                if m2 < m1 * m1 || m4 < m2 * m2 {
                    return bad(format!("declared moments {moments:?} are inconsistent"));
                }
                if let Some(t) = tau {
                    if !(t.is_finite() && *t >= 0.0) {
                        return bad("tau must be finite and >= 0".into());
                    }
                }
                Ok(())
            }
        }
    }

    pub fn tau(&self) -> BoundedSupport {
        match self {
            Self::Identity { .. } | Self::Categorical { .. } | Self::Bernoulli { .. } => {
                BoundedSupport::Bounded(1.0)
            }
            Self::FixedDiagonal { c } => {
                BoundedSupport::Bounded(c.iter().copied().fold(0.0, f64::max))
            }
            Self::ContinuousIid { tau, .. } | Self::Custom { tau, .. } => {
                tau.map_or(BoundedSupport::Unbounded, BoundedSupport::Bounded)
            }
        }
    }

    /// Closed-form M₂ and Σ_D; `None` only for custom joint laws.
    pub fn analytic_moments(&self) -> Option<WeightingMoments> {
        let n = self.n();
        let (m2, sigma) = match self {
            Self::Identity { .. } => (Vector::from_element(n, 1.0), Matrix::zeros(n, n)),
            Self::FixedDiagonal { c } => (
                Vector::from_iterator(n, c.iter().map(|v| v * v)),
                Matrix::zeros(n, n),
            ),
            Self::Categorical { p } => {
                let pv = Vector::from_column_slice(p);
                let sigma = Matrix::from_diagonal(&pv) - &pv * pv.transpose();
                (pv, sigma)
            }
            Self::Bernoulli { p } => (
                Vector::from_column_slice(p),
                Matrix::from_diagonal(&Vector::from_iterator(n, p.iter().map(|v| v * (1.0 - v)))),
            ),
            Self::ContinuousIid { moments, .. } => {
                let [_, m2, _, m4] = *moments;
                (
                    Vector::from_element(n, m2),
                    Matrix::from_diagonal_element(n, n, m4 - m2 * m2),
                )
            }
            Self::Custom { .. } => return None,
        };
        Some(WeightingMoments {
            m2_diag: m2,
            sigma_d: sigma,
            provenance: Provenance::Analytic,
        })
    }

    /// Sample mean of the squared diagonal and sample covariance of the squares.
    pub fn estimated_moments<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> Result<WeightingMoments> {
        if samples < 2 {
            return Err(Error::InvalidInput("estimated moments need at least 2 samples".into()));
        }
        let n = self.n();
        let sampler = Sampler::new(self)?;
        let mut buf = vec![0.0; n];
        let mut mean = vec![0.0; n];
        let mut co = Matrix::zeros(n, n);
        let mut delta = vec![0.0; n];
        for t in 1..=samples {
            sampler.draw_into(rng, &mut buf);
            for i in 0..n {
                let sq = buf[i] * buf[i];
                delta[i] = sq - mean[i];
                mean[i] += delta[i] / t as f64;
            }
            for j in 0..n {
                let after = buf[j] * buf[j] - mean[j];
                if after == 0.0 {
                    continue;
                }
                for i in 0..n {
                    co[(i, j)] += delta[i] * after;
                }
            }
        }
        let sigma = (&co + co.transpose()) * (0.5 / (samples - 1) as f64);
        Ok(WeightingMoments {
            m2_diag: Vector::from_vec(mean),
            sigma_d: sigma,
            provenance: Provenance::Estimated(samples),
        })
    }

    /// Number of support points, when finite.
    pub fn support_size(&self) -> Option<u128> {
        match self {
            Self::Identity { .. } | Self::FixedDiagonal { .. } => Some(1),
            Self::Categorical { p } => Some(p.iter().filter(|v| **v > 0.0).count() as u128),
            Self::Bernoulli { p } => {
                let random = p.iter().filter(|v| **v > 0.0 && **v < 1.0).count() as u32;
                1u128.checked_shl(random)
            }
            Self::ContinuousIid { .. } | Self::Custom { .. } => None,
        }
    }

    /// All outcomes of D (as diagonals) with their probabilities.
    pub fn support(&self) -> Option<Vec<(f64, Vec<f64>)>> {
        let n = self.n();
        match self {
            Self::Identity { .. } => Some(vec![(1.0, vec![1.0; n])]),
            Self::FixedDiagonal { c } => Some(vec![(1.0, c.clone())]),
            Self::Categorical { p } => Some(
                p.iter()
                    .enumerate()
                    .filter(|(_, v)| **v > 0.0)
                    .map(|(i, v)| {
                        let mut d = vec![0.0; n];
                        d[i] = 1.0;
                        (*v, d)
                    })
                    .collect(),
            ),
            Self::Bernoulli { p } => {
                let random: Vec<usize> = (0..n).filter(|&i| p[i] > 0.0 && p[i] < 1.0).collect();
                if random.len() > 40 {
                    return None;
                }
                let base: Vec<f64> = p.iter().map(|v| if *v >= 1.0 { 1.0 } else { 0.0 }).collect();
                let mut out = Vec::with_capacity(1 << random.len());
                for mask in 0u64..(1u64 << random.len()) {
                    let mut d = base.clone();
                    let mut prob = 1.0;
                    for (b, &i) in random.iter().enumerate() {
                        if mask >> b & 1 == 1 {
                            d[i] = 1.0;
                            prob *= p[i];
                        } else {
                            prob *= 1.0 - p[i];
                        }
                    }
                    out.push((prob, d));
                }
                Some(out)
            }
            Self::ContinuousIid { .. } | Self::Custom { .. } => None,
        }
    }
}

/// A scheme prepared for repeated sampling.
#[derive(Clone)]
pub struct Sampler {
    n: usize,
    kind: Kind,
}

#[derive(Clone)]
enum Kind {
    Fixed(Vec<f64>),
    Categorical(WeightedIndex<f64>),
    Bernoulli(Vec<f64>),
    Continuous(ContinuousLaw),
    Custom(DiagonalSampler),
}

/// One draw of D: either a single active row with weight 1, or a full diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Draw<'a> {
    Single(usize),
    Dense(&'a [f64]),
}

impl Sampler {
    pub fn new(scheme: &WeightingScheme) -> Result<Self> {
        scheme.validate()?;
        let n = scheme.n();
        let kind = match scheme {
            WeightingScheme::Identity { .. } => Kind::Fixed(vec![1.0; n]),
            WeightingScheme::FixedDiagonal { c } => Kind::Fixed(c.clone()),
            WeightingScheme::Categorical { p } => Kind::Categorical(
                WeightedIndex::new(p).map_err(|e| Error::InvalidScheme(e.to_string()))?,
            ),
            WeightingScheme::Bernoulli { p } => Kind::Bernoulli(p.clone()),
            WeightingScheme::ContinuousIid { law, .. } => Kind::Continuous(law.clone()),
            WeightingScheme::Custom { sampler, .. } => Kind::Custom(sampler.clone()),
        };
        Ok(Self { n, kind })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Draw into `buf` (unless the draw is a single index) and describe the outcome.
    pub fn draw<'a, R: Rng + ?Sized>(&'a self, rng: &mut R, buf: &'a mut [f64]) -> Draw<'a> {
        match &self.kind {
            Kind::Fixed(c) => Draw::Dense(c),
            Kind::Categorical(table) => Draw::Single(table.sample(rng)),
            _ => {
                self.draw_into(rng, buf);
                Draw::Dense(buf)
            }
        }
    }

    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, buf: &mut [f64]) {
        match &self.kind {
            Kind::Fixed(c) => buf.copy_from_slice(c),
            Kind::Categorical(table) => {
                buf.fill(0.0);
                buf[table.sample(rng)] = 1.0;
            }
            Kind::Bernoulli(p) => {
                for (b, pi) in buf.iter_mut().zip(p) {
                    *b = if rng.random::<f64>() < *pi { 1.0 } else { 0.0 };
                }
            }
            Kind::Continuous(law) => {
                for b in buf.iter_mut() {
                    *b = law.sample(rng);
                }
            }
            Kind::Custom(f) => {
                let mut shim = DynRng(rng);
                f(&mut shim, buf)
            }
        }
    }
}

pub fn sample_weights<R: Rng + ?Sized>(scheme: &WeightingScheme, rng: &mut R) -> Result<Vector> {
    let sampler = Sampler::new(scheme)?;
    let mut buf = vec![0.0; scheme.n()];
    sampler.draw_into(rng, &mut buf);
    Ok(Vector::from_vec(buf))
}

/// Cov(D²u) = Σ_D ⊙ uuᵀ.
pub fn cov_of_squares_apply(sigma_d: &Matrix, u: &Vector) -> Result<Matrix> {
    if sigma_d.shape() != (u.len(), u.len()) {
        return Err(Error::dims("cov_of_squares_apply", u.len(), sigma_d.nrows()));
    }
    Ok(sigma_d.component_mul(&(u * u.transpose())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_at;

    #[test]
    fn fixed_draws() {
        let mut rng = rng_at(1, 0, 0);
        let w = sample_weights(&WeightingScheme::Identity { n: 3 }, &mut rng).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 1.0, 1.0]);
        let w = sample_weights(&WeightingScheme::FixedDiagonal { c: vec![2.0, 0.5] }, &mut rng).unwrap();
        assert_eq!(w.as_slice(), &[2.0, 0.5]);
        for seed in 0..20 {
            let mut rng = rng_at(seed, 0, 0);
            let w = sample_weights(&WeightingScheme::Categorical { p: vec![1.0, 0.0] }, &mut rng).unwrap();
            assert_eq!(w.as_slice(), &[1.0, 0.0]);
        }
    }

    #[test]
    fn categorical_draw_is_one_hot() {
        let s = WeightingScheme::uniform_categorical(5);
        let sampler = Sampler::new(&s).unwrap();
        let mut buf = vec![0.0; 5];
        for t in 0..100 {
            sampler.draw_into(&mut rng_at(3, t, 0), &mut buf);
            assert_eq!(buf.iter().filter(|v| **v == 1.0).count(), 1);
            assert_eq!(buf.iter().filter(|v| **v == 0.0).count(), 4);
            let mut scratch = [0.0; 5];
            let single = sampler.draw(&mut rng_at(3, t, 0), &mut scratch);
            let Draw::Single(i) = single else { panic!() };
            assert_eq!(buf[i], 1.0);
        }
    }

    #[test]
    fn analytic_closed_forms() {
        let m = WeightingScheme::Categorical { p: vec![0.5, 0.5] }.analytic_moments().unwrap();
        assert_eq!(m.m2_diag.as_slice(), &[0.5, 0.5]);
        assert_eq!(m.sigma_d, Matrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]));
        let m = WeightingScheme::Identity { n: 2 }.analytic_moments().unwrap();
        assert_eq!(m.sigma_d, Matrix::zeros(2, 2));
        let m = WeightingScheme::Bernoulli { p: vec![1.0, 1.0] }.analytic_moments().unwrap();
        assert_eq!(m.m2_diag.as_slice(), &[1.0, 1.0]);
        assert_eq!(m.sigma_d, Matrix::zeros(2, 2));
    }

    #[test]
    fn categorical_rows_sum_to_zero_exactly() {
        let m = WeightingScheme::Categorical { p: vec![0.25, 0.25, 0.5] }.analytic_moments().unwrap();
        for r in m.sigma_d.row_iter() {
            assert_eq!(r.sum(), 0.0);
        }
    }

    #[test]
    fn estimated_moments_degenerate_are_exact() {
        let mut rng = rng_at(0, 0, 0);
        let m = WeightingScheme::Identity { n: 2 }.estimated_moments(100, &mut rng).unwrap();
        assert_eq!(m.m2_diag.as_slice(), &[1.0, 1.0]);
        assert_eq!(m.sigma_d, Matrix::zeros(2, 2));
        assert_eq!(m.provenance, Provenance::Estimated(100));
        let m = WeightingScheme::FixedDiagonal { c: vec![2.0, 3.0] }.estimated_moments(37, &mut rng).unwrap();
        assert_eq!(m.m2_diag.as_slice(), &[4.0, 9.0]);
        assert_eq!(m.sigma_d, Matrix::zeros(2, 2));
    }

    #[test]
    fn estimated_categorical_close() {
        let s = WeightingScheme::Categorical { p: vec![0.5, 0.5] };
        let est = s.estimated_moments(100_000, &mut rng_at(5, 0, 0)).unwrap();
        let exact = s.analytic_moments().unwrap();
        assert!((est.m2_diag - exact.m2_diag).amax() < 0.01);
        assert!((est.sigma_d - exact.sigma_d).amax() < 0.01);
    }

    #[test]
    fn cov_of_squares_examples() {
        let u = Vector::from_vec(vec![1.0, 2.0]);
        assert_eq!(cov_of_squares_apply(&Matrix::zeros(2, 2), &u).unwrap(), Matrix::zeros(2, 2));
        assert_eq!(
            cov_of_squares_apply(&Matrix::identity(2, 2), &u).unwrap(),
            Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 4.0]))
        );
        // enumerate the two outcomes of categorical (0.5, 0.5) with u = (1, 1)
        let u = Vector::from_vec(vec![1.0, 1.0]);
        let outcomes = [Vector::from_vec(vec![1.0, 0.0]), Vector::from_vec(vec![0.0, 1.0])];
        let mean = (&outcomes[0] + &outcomes[1]) * 0.5;
        let mut cov = Matrix::zeros(2, 2);
        for o in &outcomes {
            let c = o.component_mul(&u) - &mean;
            cov += &c * c.transpose() * 0.5;
        }
        let sigma = Matrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert_eq!(cov_of_squares_apply(&sigma, &u).unwrap(), cov);
    }

    #[test]
    fn validation() {
        assert!(WeightingScheme::categorical(vec![0.5, 0.6]).is_err());
        assert!(WeightingScheme::Bernoulli { p: vec![1.2] }.validate().is_err());
        let bad = WeightingScheme::ContinuousIid {
            n: 2,
            law: ContinuousLaw::Normal { mean: 0.0, std: 1.0 },
            moments: [1.0, 0.5, 0.0, 1.0],
            tau: None,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn bernoulli_support_probabilities_sum_to_one() {
        let s = WeightingScheme::Bernoulli { p: vec![0.3, 1.0, 0.6, 0.0] };
        let sup = s.support().unwrap();
        assert_eq!(sup.len() as u128, s.support_size().unwrap());
        assert_eq!(sup.len(), 4);
        let total: f64 = sup.iter().map(|(p, _)| p).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn laplace_sampler_moments() {
        let law = ContinuousLaw::Laplace { location: 0.5, scale: 0.2 };
        let mut rng = rng_at(11, 0, 0);
        let k = 200_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..k {
            let v = law.sample(&mut rng);
            sum += v;
            sq += (v - 0.5) * (v - 0.5);
        }
        assert!((sum / k as f64 - 0.5).abs() < 0.005);
        // variance of Laplace(b) is 2b²
        assert!((sq / k as f64 - 0.08).abs() < 0.003);
    }

    #[test]
    fn minibatch_draws_exactly_b() {
        let s = WeightingScheme::minibatch(6, 2).unwrap();
        let sampler = Sampler::new(&s).unwrap();
        let mut buf = vec![0.0; 6];
        sampler.draw_into(&mut rng_at(2, 0, 0), &mut buf);
        assert_eq!(buf.iter().sum::<f64>(), 2.0);
        assert!(s.analytic_moments().is_none());
    }
}
