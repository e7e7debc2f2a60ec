//! Shared fixtures for the benchmarks.

use rwgd_core::{build_weighted_problem, Dataset, GaussianRescaled, WeightedProblem, WeightingScheme};

/// Noiseless rescaled Gaussian problem with norm-softmax weights.
pub fn fixture(n: usize, d: usize, seed: u64) -> (WeightedProblem, WeightingScheme) {
    let design = GaussianRescaled {
        n,
        d,
        rescale_fraction: 0.2,
        rescale_factor: 5.0,
        entry_std: 1.0 / (d as f64).sqrt(),
        unit_norm: false,
        seed,
    }
    .design()
    .expect("valid generator");
    let y = &design.x * &design.w_star;
    let norms = design.x.row_iter().map(|r| r.norm()).collect::<Vec<_>>();
    let scheme = WeightingScheme::norm_softmax(&norms.into(), 1.0);
    let m2 = scheme.analytic_moments().expect("categorical moments").m2_diag;
    let ds = Dataset::new(design.x, y).expect("finite data");
    (build_weighted_problem(ds, &m2).expect("weighted problem"), scheme)
}
