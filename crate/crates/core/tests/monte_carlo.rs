use rwgd_core::bounds;
use rwgd_core::linalg::{Matrix, Vector};
use rwgd_core::montecarlo::{
    ensemble_moments, final_iterates, gmc_contraction_estimate, risk_limit_estimate, w2_to_point_mass, EnsembleOptions,
    RiskSetup,
};
use rwgd_core::weighting::WeightingScheme;
use rwgd_core::{build_weighted_problem, moments, Dataset, MomentContext, RunOptions, StepSchedule, WeightedProblem};

fn two_by_two() -> (WeightedProblem, WeightingScheme) {
    let scheme = WeightingScheme::Categorical { p: vec![0.5, 0.5] };
    let mom = scheme.analytic_moments().unwrap();
    let ds = Dataset::new(Matrix::from_row_slice(2, 2, &[1.0, 0.4, -0.3, 0.8]), Vector::from_row_slice(&[1.0, -0.5])).unwrap();
    (build_weighted_problem(ds, &mom.m2_diag).unwrap(), scheme)
}

#[test]
fn ensemble_mean_converges_to_exact_moments() {
    let (wp, scheme) = two_by_two();
    let schedule = StepSchedule::Constant { alpha: 0.5 };
    let mom = scheme.analytic_moments().unwrap();
    let ctx = MomentContext::new(&wp, &mom, schedule.clone()).unwrap();
    let w1 = Vector::from_row_slice(&[2.0, -1.0]);
    let exact = moments::propagate(&ctx, &(&w1 - &wp.w_hat), 6).unwrap();
    let opts = EnsembleOptions::default();

    let mut last_err = f64::INFINITY;
    for n_traj in [1_000, 10_000, 100_000] {
        let e = ensemble_moments(&wp, &scheme, &schedule, &w1, 6, n_traj, 17, opts).unwrap();
        let mut worst = 0.0f64;
        for (k, st) in exact.iter().enumerate() {
            let target = st.a.trace();
            let err = (e.sq_distance[k] - target).abs();
            assert!(err <= 3.0 * e.standard_errors[k] + 1e-12, "n = {n_traj}, k = {k}: {err} vs se {}", e.standard_errors[k]);
            worst = worst.max(err);
        }
        // errors shrink as the ensemble grows, allowing for sampling jitter
        assert!(worst <= last_err * 1.5, "n = {n_traj}: {worst} vs {last_err}");
        last_err = worst;
    }
}

#[test]
fn identity_ensemble_equals_deterministic_path() {
    let (wp, _) = two_by_two();
    let scheme = WeightingScheme::Identity { n: 2 };
    let wp = build_weighted_problem(wp.dataset.clone(), &Vector::from_element(2, 1.0)).unwrap();
    let schedule = StepSchedule::Constant { alpha: 0.3 };
    let w1 = Vector::zeros(2);
    let e = ensemble_moments(&wp, &scheme, &schedule, &w1, 20, 4, 0, EnsembleOptions::default()).unwrap();
    let rec = rwgd_core::run_trajectory(&wp, &scheme, &schedule, &w1, 20, 9, RunOptions::default()).unwrap();
    for (k, w) in rec.iterates.iter().enumerate() {
        assert!((&e.mean_error[k] - (w - &wp.w_hat)).amax() == 0.0);
        assert_eq!(e.standard_errors[k], 0.0);
    }
}

fn independent_rows() -> (WeightedProblem, WeightingScheme) {
    let scheme = WeightingScheme::Categorical { p: vec![0.3, 0.3, 0.4] };
    let mom = scheme.analytic_moments().unwrap();
    let x = Matrix::from_row_slice(3, 4, &[1.0, 0.2, 0.0, -0.4, 0.3, 0.9, 0.5, 0.0, -0.2, 0.1, 0.7, 0.6]);
    let ds = Dataset::new(x, Vector::from_row_slice(&[1.0, 2.0, -1.0])).unwrap();
    (build_weighted_problem(ds, &mom.m2_diag).unwrap(), scheme)
}

#[test]
fn point_mass_collapse_is_geometric() {
    let (wp, scheme) = independent_rows();
    assert!(wp.residual.norm() <= 1e-10);
    let alpha = 0.8 / wp.norm_xx;
    let rate = bounds::gmc_rate(&wp, alpha, 1.0, 2.0).unwrap();
    let w1 = Vector::zeros(4);
    let start = (&w1 - &wp.w_hat).norm();
    let schedule = StepSchedule::Constant { alpha };
    let mut prev = f64::INFINITY;
    for k in [10, 40, 160] {
        let finals = final_iterates(&wp, &scheme, &schedule, &w1, k, 2000, 5, RunOptions::default()).unwrap();
        let w2 = w2_to_point_mass(&finals, &wp.w_hat).unwrap();
        assert!(w2 <= rate.rq.powi(k as i32) * start * 1.05, "k = {k}: {w2}");
        assert!(w2 < prev);
        prev = w2;
    }
}

#[test]
fn coupled_pairs_respect_gmc_envelope() {
    let (wp, scheme) = two_by_two();
    let alpha = 0.5 / wp.norm_xx;
    let rate = bounds::gmc_rate(&wp, alpha, 1.0, 2.0).unwrap();
    let u1 = Vector::from_row_slice(&[1.0, 1.0]);
    let v1 = Vector::from_row_slice(&[-1.0, 0.5]);
    let start = (&u1 - &v1).norm();
    let est = gmc_contraction_estimate(&wp, &scheme, alpha, &u1, &v1, 200, 2.0, 2000, 8).unwrap();
    for (k, (m, se)) in est.moment.iter().zip(&est.se).enumerate() {
        assert!(*m <= rate.rq.powi(k as i32) * start + 3.0 * se + 1e-15, "k = {k}");
    }
}

#[test]
fn rank_one_weighting_blows_up_risk() {
    // two observations of one coordinate; the well-measured row gets little weight
    let x = Matrix::from_row_slice(2, 1, &[0.05, 1.0]);
    let w_star = Vector::from_row_slice(&[1.0]);
    let sigma = Matrix::identity(2, 2) * 0.01;
    let bad = WeightingScheme::Categorical { p: vec![0.99, 0.01] };
    let uniform = WeightingScheme::uniform_categorical(2);
    let estimate = |scheme: &WeightingScheme, alpha: f64| {
        let setup = RiskSetup {
            x: &x,
            scheme,
            alpha,
            w_star: &w_star,
            sigma_eps: &sigma,
            seed: 2,
            enforce_assumptions: true,
        };
        let limit = setup.expected_limit().unwrap();
        let est = risk_limit_estimate(&setup, Some(4000), 4000).unwrap();
        assert!((est.mean - limit).abs() <= 3.0 * est.se, "{} vs {limit}", est.mean);
        est.mean
    };
    let bad_risk = estimate(&bad, 0.5);
    let uniform_risk = estimate(&uniform, 0.5);
    assert!(bad_risk > 3.0 * uniform_risk, "{bad_risk} vs {uniform_risk}");
}
