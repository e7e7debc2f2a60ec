use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, SpectralDecomposition, Vector};

/// A dataset together with E[D²] and everything the theory derives from the pair.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedProblem {
    pub dataset: Dataset,
    pub m2_diag: Vector,
    /// M₂^{1/2}X
    pub x_hat: Matrix,
    /// M₂^{1/2}Y
    pub y_hat: Vector,
    /// XᵀX
    pub xx: Matrix,
    /// XᵀM₂X
    pub xx_hat: Matrix,
    /// X̂⁺Ŷ
    pub w_hat: Vector,
    /// Y - Xŵ
    pub residual: Vector,
    pub sigma_min_plus_xx_hat: f64,
    pub sigma_min_plus_xx: f64,
    pub norm_xx_hat: f64,
    pub norm_xx: f64,
    pub norm_x: f64,
    pub rank: usize,
    /// I - X⁺X
    pub kernel_projector: Matrix,
    pub svd_x: SpectralDecomposition,
    pub svd_x_hat: SpectralDecomposition,
}

impl WeightedProblem {
    pub fn n(&self) -> usize {
        self.dataset.n()
    }

    pub fn d(&self) -> usize {
        self.dataset.d()
    }

    pub fn x(&self) -> &Matrix {
        &self.dataset.x
    }

    pub fn y(&self) -> &Vector {
        &self.dataset.y
    }

    pub fn is_identity_weighting(&self) -> bool {
        self.m2_diag.iter().all(|&m| m == 1.0)
    }

    /// ‖(I - X⁺X)v‖₂
    pub fn kernel_component(&self, v: &Vector) -> f64 {
        (&self.kernel_projector * v).norm()
    }

    /// True when the rows of X are linearly independent.
    pub fn rows_independent(&self) -> bool {
        self.rank == self.n()
    }

    /// (X̂⁺M₂^{1/2}), the linear map Y ↦ ŵ.
    pub fn solution_map(&self) -> Matrix {
        let mut p = self.svd_x_hat.pseudo_inverse();
        for (j, m) in self.m2_diag.iter().enumerate() {
            p.column_mut(j).scale_mut(m.sqrt());
        }
        p
    }
}

pub fn build_weighted_problem(dataset: Dataset, m2_diag: &Vector) -> Result<WeightedProblem> {
    let n = dataset.n();
    if m2_diag.len() != n {
        return Err(Error::dims("E[D^2] diagonal", n, m2_diag.len()));
    }
    for (index, &value) in m2_diag.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite("E[D^2] diagonal"));
        }
        if value <= 0.0 {
            return Err(Error::NonPositiveWeight { index, value });
        }
    }
    let x = &dataset.x;
    let y = &dataset.y;
    let root = m2_diag.map(f64::sqrt);
    let mut x_hat = x.clone();
    for (i, r) in root.iter().enumerate() {
        x_hat.row_mut(i).scale_mut(*r);
    }
    let y_hat = y.component_mul(&root);

    let svd_x = linalg::svd(x)?;
    let svd_x_hat = linalg::svd(&x_hat)?;
    if svd_x.rank == 0 || svd_x_hat.rank == 0 {
        return Err(Error::NoNonzeroSingularValue);
    }
    let w_hat = svd_x_hat.pseudo_inverse() * &y_hat;
    let residual = y - x * &w_hat;

    let xx = x.transpose() * x;
    let mut xt_m2 = x.transpose();
    for (j, m) in m2_diag.iter().enumerate() {
        xt_m2.column_mut(j).scale_mut(*m);
    }
    let xx_hat = &xt_m2 * x;

    let norm_x = svd_x.sigma_max();
    let s_hat = svd_x_hat.singular_values[svd_x_hat.rank - 1];
    let s = svd_x.singular_values[svd_x.rank - 1];
    let kernel_projector = linalg::projector_from(&svd_x);

    Ok(WeightedProblem {
        m2_diag: m2_diag.clone(),
        x_hat,
        y_hat,
        xx,
        xx_hat,
        w_hat,
        residual,
        sigma_min_plus_xx_hat: s_hat * s_hat,
        sigma_min_plus_xx: s * s,
        norm_xx_hat: svd_x_hat.sigma_max().powi(2),
        norm_xx: norm_x * norm_x,
        norm_x,
        rank: svd_x.rank,
        kernel_projector,
        svd_x,
        svd_x_hat,
        dataset,
    })
}

/// Unweighted problem (M₂ = I), i.e. plain least squares.
pub fn build_unweighted_problem(dataset: Dataset) -> Result<WeightedProblem> {
    let n = dataset.n();
    build_weighted_problem(dataset, &Vector::from_element(n, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: usize, cols: usize, x: &[f64], y: &[f64]) -> Dataset {
        Dataset::new(Matrix::from_row_slice(rows, cols, x), Vector::from_row_slice(y)).unwrap()
    }

    #[test]
    fn identity_problem() {
        let wp = build_weighted_problem(ds(2, 2, &[1.0, 0.0, 0.0, 1.0], &[1.0, 1.0]), &Vector::from_vec(vec![1.0, 1.0])).unwrap();
        assert!((&wp.w_hat - Vector::from_vec(vec![1.0, 1.0])).amax() < 1e-15);
        assert!(wp.residual.norm() < 1e-15);
        assert!(wp.rows_independent());
    }

    #[test]
    fn rank_one_problem() {
        let wp = build_unweighted_problem(ds(2, 2, &[1.0, 0.0, 2.0, 0.0], &[1.0, 2.0])).unwrap();
        assert!((&wp.w_hat - Vector::from_vec(vec![1.0, 0.0])).amax() < 1e-14);
        assert!(wp.residual.norm() < 1e-14);
        assert!((wp.sigma_min_plus_xx - 5.0).abs() < 1e-13);
    }

    #[test]
    fn rank_one_solution_map_closed_form() {
        let (x11, x21, p1, p2) = (0.3, 1.7, 0.8, 0.45);
        let d = ds(2, 2, &[x11, 0.0, x21, 0.0], &[0.0, 0.0]);
        let wp = build_weighted_problem(d, &Vector::from_vec(vec![p1 * p1, p2 * p2])).unwrap();
        let p = wp.solution_map();
        let den = (p1 * x11).powi(2) + (p2 * x21).powi(2);
        assert!((p[(0, 0)] - p1 * p1 * x11 / den).abs() < 1e-13);
        assert!((p[(0, 1)] - p2 * p2 * x21 / den).abs() < 1e-13);
        assert!(p.row(1).amax() < 1e-14);
    }

    #[test]
    fn normal_equations_and_kernel() {
        let x = [1.0, 2.0, 0.5, -1.0, 0.0, 1.0, 2.0, 2.0, 1.5, 0.5, 1.0, 0.0];
        let d = ds(4, 3, &x, &[1.0, -2.0, 0.3, 4.0]);
        let m2 = Vector::from_vec(vec![0.1, 0.4, 0.2, 0.3]);
        let wp = build_weighted_problem(d, &m2).unwrap();
        let mut xt_m2 = wp.x().transpose();
        for j in 0..4 {
            xt_m2.column_mut(j).scale_mut(m2[j]);
        }
        assert!((xt_m2 * &wp.residual).amax() < 1e-10);
        assert!(wp.kernel_component(&wp.w_hat) < 1e-10);
    }

    #[test]
    fn rejects_zero_weight() {
        let d = ds(2, 1, &[1.0, 1.0], &[0.0, 0.0]);
        let err = build_weighted_problem(d, &Vector::from_vec(vec![1.0, 0.0])).unwrap_err();
        assert_eq!(err, Error::NonPositiveWeight { index: 1, value: 0.0 });
        assert!(err.to_string().contains("removed"));
    }
}
