use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vector,
    pub w_star: Option<Vector>,
    pub sigma_eps: Option<Matrix>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vector) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidInput("design matrix must be non-empty".into()));
        }
        if x.nrows() != y.len() {
            return Err(Error::dims("dataset labels", x.nrows(), y.len()));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("design matrix"));
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("labels"));
        }
        Ok(Self {
            x,
            y,
            w_star: None,
            sigma_eps: None,
        })
    }

    pub fn with_truth(mut self, w_star: Vector, sigma_eps: Option<Matrix>) -> Result<Self> {
        if w_star.len() != self.d() {
            return Err(Error::dims("ground truth", self.d(), w_star.len()));
        }
        if let Some(s) = &sigma_eps {
            if s.shape() != (self.n(), self.n()) {
                return Err(Error::dims("noise covariance", format!("{0}x{0}", self.n()), format!("{}x{}", s.nrows(), s.ncols())));
            }
        }
        self.w_star = Some(w_star);
        self.sigma_eps = sigma_eps;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn row_norms(&self) -> Vector {
        row_norms(&self.x)
    }

    /// Divides X, Y (and Σ_ε by the square) by `s`; the ground truth is unchanged.
    pub fn rescaled(&self, s: f64) -> Dataset {
        Dataset {
            x: &self.x / s,
            y: &self.y / s,
            w_star: self.w_star.clone(),
            sigma_eps: self.sigma_eps.as_ref().map(|m| m / (s * s)),
        }
    }
}

pub fn row_norms(x: &Matrix) -> Vector {
    Vector::from_iterator(x.nrows(), x.row_iter().map(|r| r.norm()))
}

/// Gaussian design with a random subset of rows blown up by a constant factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianRescaled {
    pub n: usize,
    pub d: usize,
    pub rescale_fraction: f64,
    pub rescale_factor: f64,
    /// Standard deviation of the entries before rescaling.
    pub entry_std: f64,
    /// Scale X so that ‖X‖ = 1 (after row rescaling).
    pub unit_norm: bool,
    pub seed: u64,
}

impl Default for GaussianRescaled {
    fn default() -> Self {
        Self {
            n: 40,
            d: 60,
            rescale_fraction: 0.2,
            rescale_factor: 5.0,
            entry_std: 1.0,
            unit_norm: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub x: Matrix,
    /// `true` for rows that were rescaled.
    pub rescaled: Vec<bool>,
    pub w_star: Vector,
}

impl GaussianRescaled {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::InvalidInput("generator needs n, d >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.rescale_fraction) {
            return Err(Error::InvalidInput(format!(
                "rescale_fraction {} not in [0, 1]",
                self.rescale_fraction
            )));
        }
        if !(self.rescale_factor.is_finite() && self.rescale_factor > 0.0) {
            return Err(Error::InvalidInput("rescale_factor must be positive".into()));
        }
        if !(self.entry_std.is_finite() && self.entry_std > 0.0) {
            return Err(Error::InvalidInput("entry_std must be positive".into()));
        }
        Ok(())
    }

    /// X, the rescaled-row mask and a standard normal ground truth.
    pub fn design(&self) -> Result<Design> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut x = Matrix::zeros(self.n, self.d);
        for i in 0..self.n {
            for j in 0..self.d {
                let z: f64 = StandardNormal.sample(&mut rng);
                x[(i, j)] = self.entry_std * z;
            }
        }
        let count = (self.rescale_fraction * self.n as f64).round() as usize;
        let mut rescaled = vec![false; self.n];
        for i in sample(&mut rng, self.n, count.min(self.n)).into_iter() {
            rescaled[i] = true;
            x.row_mut(i).scale_mut(self.rescale_factor);
        }
        if self.unit_norm {
            let s = linalg::spectral_norm(&x)?;
            if s > 0.0 {
                x /= s;
            }
        }
        let w_star = Vector::from_iterator(self.d, (0..self.d).map(|_| StandardNormal.sample(&mut rng)));
        Ok(Design { x, rescaled, w_star })
    }

    /// Dataset with Y = Xw* + ε, ε_i ~ N(0, noise_std[i]²).
    pub fn dataset(&self, noise_std: &[f64]) -> Result<Dataset> {
        let design = self.design()?;
        heteroscedastic(design.x, design.w_star, noise_std, self.seed.wrapping_add(1))
    }
}

/// Y = Xw* + ε with independent per-row noise levels; Σ_ε = diag(noise_std²).
pub fn heteroscedastic(x: Matrix, w_star: Vector, noise_std: &[f64], seed: u64) -> Result<Dataset> {
    let n = x.nrows();
    if noise_std.len() != n {
        return Err(Error::dims("noise map", n, noise_std.len()));
    }
    if noise_std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::InvalidInput("noise standard deviations must be finite and >= 0".into()));
    }
    if w_star.len() != x.ncols() {
        return Err(Error::dims("ground truth", x.ncols(), w_star.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = &x * &w_star;
    for (i, s) in noise_std.iter().enumerate() {
        let z: f64 = StandardNormal.sample(&mut rng);
        y[i] += s * z;
    }
    let sigma = Matrix::from_diagonal(&Vector::from_iterator(n, noise_std.iter().map(|s| s * s)));
    Dataset::new(x, y)?.with_truth(w_star, Some(sigma))
}
