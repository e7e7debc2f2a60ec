//! Turning config pieces into core objects.

use crate::config::{
    AlphaRuleKind, AlphaSpec, DatasetSpec, GeneratorSpec, LawSpec, NoiseMap, ScheduleSpec, SchemeSpec,
};
use crate::error::{CliError, Result};
use rwgd_core::data::{heteroscedastic, row_norms, GaussianRescaled};
use rwgd_core::rng::rng_at;
use rwgd_core::{
    build_weighted_problem, ContinuousLaw, Dataset, Matrix, MomentContext, StepSchedule, Vector, WeightedProblem,
    WeightingMoments, WeightingScheme,
};
use std::path::Path;

/// A dataset plus the mask of rows the generator rescaled, if any.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub rescaled: Option<Vec<bool>>,
}

pub fn load_dataset(spec: &DatasetSpec, base: &Path) -> Result<LoadedData> {
    match spec {
        DatasetSpec::Generator(g) => generate(g),
        DatasetSpec::File { path } => {
            let full = if path.is_absolute() { path.clone() } else { base.join(path) };
            Ok(LoadedData {
                dataset: read_csv_dataset(&full)?,
                rescaled: None,
            })
        }
        DatasetSpec::Inline { x, y, w_star, noise_std } => {
            let x = matrix_from_rows(x)?;
            let mut ds = Dataset::new(x, Vector::from_vec(y.clone()))?;
            if let Some(w) = w_star {
                let sigma = noise_std.as_ref().map(|s| diag_sq(s));
                ds = ds.with_truth(Vector::from_vec(w.clone()), sigma)?;
            }
            Ok(LoadedData { dataset: ds, rescaled: None })
        }
    }
}

fn diag_sq(std: &[f64]) -> Matrix {
    Matrix::from_diagonal(&Vector::from_iterator(std.len(), std.iter().map(|s| s * s)))
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n == 0 || d == 0 {
        return Err(CliError::Config("design matrix must be non-empty".into()));
    }
    if rows.iter().any(|r| r.len() != d) {
        return Err(CliError::Config("design matrix rows have different lengths".into()));
    }
    Ok(Matrix::from_fn(n, d, |i, j| rows[i][j]))
}

fn read_csv_dataset(path: &Path) -> Result<Dataset> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        rows.push(vals);
    }
    if rows.is_empty() || rows[0].len() < 2 {
        return Err(CliError::Config(format!(
            "{}: need at least one row with one feature and a label",
            path.display()
        )));
    }
    let y: Vec<f64> = rows.iter().map(|r| *r.last().unwrap()).collect();
    let x: Vec<Vec<f64>> = rows.iter().map(|r| r[..r.len() - 1].to_vec()).collect();
    Ok(Dataset::new(matrix_from_rows(&x)?, Vector::from_vec(y))?)
}

fn generate(spec: &GeneratorSpec) -> Result<LoadedData> {
    match spec {
        GeneratorSpec::GaussianRescaled {
            n,
            d,
            rescale_fraction,
            rescale_factor,
            entry_std,
            unit_norm,
            noise_std,
            seed,
        } => {
            if *noise_std < 0.0 {
                return Err(CliError::Config("noise_std must be >= 0".into()));
            }
            let g = GaussianRescaled {
                n: *n,
                d: *d,
                rescale_fraction: *rescale_fraction,
                rescale_factor: *rescale_factor,
                entry_std: *entry_std,
                unit_norm: *unit_norm,
                seed: *seed,
            };
            let design = g.design()?;
            let dataset = heteroscedastic(design.x, design.w_star, &vec![*noise_std; *n], seed.wrapping_add(1))?;
            Ok(LoadedData {
                dataset,
                rescaled: Some(design.rescaled),
            })
        }
        GeneratorSpec::Heteroscedastic {
            n,
            d,
            rescale_fraction,
            rescale_factor,
            entry_std,
            unit_norm,
            noise_map,
            w_star,
            seed,
        } => {
            let g = GaussianRescaled {
                n: *n,
                d: *d,
                rescale_fraction: *rescale_fraction,
                rescale_factor: *rescale_factor,
                entry_std: *entry_std,
                unit_norm: *unit_norm,
                seed: *seed,
            };
            let design = g.design()?;
            let std: Vec<f64> = match noise_map {
                NoiseMap::PerRow { std } => {
                    if std.len() != *n {
                        return Err(CliError::Config(format!("noise map has {} entries, need {n}", std.len())));
                    }
                    std.clone()
                }
                NoiseMap::Rescaled { rescaled_std, other_std } => design
                    .rescaled
                    .iter()
                    .map(|&r| if r { *rescaled_std } else { *other_std })
                    .collect(),
            };
            if std.iter().any(|s| !(*s >= 0.0)) {
                return Err(CliError::Config("noise levels must be >= 0".into()));
            }
            let truth = match w_star {
                Some(w) if w.len() != *d => {
                    return Err(CliError::Config(format!("w_star has {} entries, need {d}", w.len())))
                }
                Some(w) => Vector::from_vec(w.clone()),
                None => design.w_star,
            };
            let dataset = heteroscedastic(design.x, truth, &std, seed.wrapping_add(1))?;
            Ok(LoadedData {
                dataset,
                rescaled: Some(design.rescaled),
            })
        }
    }
}

pub fn build_scheme(spec: &SchemeSpec, x: &Matrix) -> Result<WeightingScheme> {
    let n = x.nrows();
    let scheme = match spec {
        SchemeSpec::Identity => WeightingScheme::Identity { n },
        SchemeSpec::Uniform => WeightingScheme::uniform_categorical(n),
        SchemeSpec::Categorical { p } => WeightingScheme::Categorical { p: p.clone() },
        SchemeSpec::NormSoftmax { sign } => WeightingScheme::norm_softmax(&row_norms(x), *sign),
        SchemeSpec::Bernoulli { p } => WeightingScheme::Bernoulli { p: p.clone() },
        SchemeSpec::FixedDiagonal { c } => WeightingScheme::FixedDiagonal { c: c.clone() },
        SchemeSpec::ContinuousIid { law, moments, tau } => WeightingScheme::ContinuousIid {
            n,
            law: match law {
                LawSpec::Uniform { low, high } => ContinuousLaw::Uniform { low: *low, high: *high },
                LawSpec::Normal { mean, std } => ContinuousLaw::Normal { mean: *mean, std: *std },
                LawSpec::Laplace { location, scale } => ContinuousLaw::Laplace {
                    location: *location,
                    scale: *scale,
                },
            },
            moments: *moments,
            tau: *tau,
        },
        SchemeSpec::Minibatch { batch } => WeightingScheme::minibatch(n, *batch)?,
    };
    if scheme.n() != n {
        return Err(CliError::Config(format!(
            "scheme covers {} rows but the dataset has {n}",
            scheme.n()
        )));
    }
    scheme.validate()?;
    Ok(scheme)
}

/// Closed-form moments when available, otherwise a Monte Carlo estimate on a
/// stream reserved for this purpose.
pub fn scheme_moments(scheme: &WeightingScheme, samples: usize, seed: u64) -> Result<WeightingMoments> {
    match scheme.analytic_moments() {
        Some(m) => Ok(m),
        None => {
            let mut rng = rng_at(seed, u64::MAX, 0);
            Ok(scheme.estimated_moments(samples, &mut rng)?)
        }
    }
}

/// A scheme together with its weighted problem and moments.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub label: String,
    pub scheme: WeightingScheme,
    pub moments: WeightingMoments,
    pub problem: WeightedProblem,
}

pub fn prepare(label: &str, spec: &SchemeSpec, dataset: &Dataset, samples: usize, seed: u64) -> Result<Prepared> {
    let scheme = build_scheme(spec, &dataset.x)?;
    let moments = scheme_moments(&scheme, samples, seed)?;
    let problem = build_weighted_problem(dataset.clone(), &moments.m2_diag)?;
    Ok(Prepared {
        label: label.into(),
        scheme,
        moments,
        problem,
    })
}

fn rule_alpha(kind: AlphaRuleKind, factor: f64, p: &Prepared) -> Result<f64> {
    Ok(match kind {
        AlphaRuleKind::InverseXxNorm => factor / p.problem.norm_xx,
        AlphaRuleKind::InverseWeightedNorm => factor / p.problem.norm_xx_hat,
        AlphaRuleKind::VarianceStepBound => {
            let ctx = MomentContext::new(&p.problem, &p.moments, StepSchedule::Constant { alpha: 1.0 })?;
            factor * ctx.variance_step_bound()
        }
    })
}

/// Resolve α against every prepared scheme, keeping the smallest value.
pub fn resolve_alpha(spec: &AlphaSpec, prepared: &[Prepared]) -> Result<f64> {
    let alpha = match spec {
        AlphaSpec::Value(a) => *a,
        AlphaSpec::Rule(rule) => {
            if !(rule.factor > 0.0 && rule.factor.is_finite()) {
                return Err(CliError::Config("step-size factor must be positive".into()));
            }
            let mut best = f64::INFINITY;
            for p in prepared {
                best = best.min(rule_alpha(rule.rule, rule.factor, p)?);
            }
            best
        }
    };
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(CliError::Config(format!("step size {alpha} is not a positive number")));
    }
    Ok(alpha)
}

pub fn resolve_schedule(spec: &ScheduleSpec, prepared: &[Prepared]) -> Result<StepSchedule> {
    let s = match spec {
        ScheduleSpec::Constant { alpha } => StepSchedule::Constant {
            alpha: resolve_alpha(alpha, prepared)?,
        },
        ScheduleSpec::Harmonic { alpha } => StepSchedule::Harmonic {
            alpha: resolve_alpha(alpha, prepared)?,
        },
        ScheduleSpec::Explicit { steps } => StepSchedule::Explicit { steps: steps.clone() },
    };
    s.validate()?;
    Ok(s)
}

pub fn start_point(w1: Option<&Vec<f64>>, d: usize) -> Result<Vector> {
    match w1 {
        None => Ok(Vector::zeros(d)),
        Some(w) if w.len() == d => Ok(Vector::from_vec(w.clone())),
        Some(w) => Err(CliError::Config(format!("w1 has {} entries, need {d}", w.len()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AlphaRule;

    fn tiny() -> Dataset {
        Dataset::new(Matrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 1.0, 1.0]), Vector::from_row_slice(&[1.0, 2.0, 3.0]))
            .unwrap()
    }

    #[test]
    fn rules_take_the_smallest_step() {
        let ds = tiny();
        let a = prepare("u", &SchemeSpec::Uniform, &ds, 10, 0).unwrap();
        let b = prepare("i", &SchemeSpec::NormSoftmax { sign: 1.0 }, &ds, 10, 0).unwrap();
        let rule = AlphaSpec::Rule(AlphaRule {
            rule: AlphaRuleKind::InverseWeightedNorm,
            factor: 0.5,
        });
        let alpha = resolve_alpha(&rule, &[a.clone(), b.clone()]).unwrap();
        let expect = (0.5 / a.problem.norm_xx_hat).min(0.5 / b.problem.norm_xx_hat);
        assert_eq!(alpha, expect);
        let plain = AlphaSpec::Rule(AlphaRule {
            rule: AlphaRuleKind::InverseXxNorm,
            factor: 1.0,
        });
        assert_eq!(resolve_alpha(&plain, &[a.clone(), b]).unwrap(), 1.0 / a.problem.norm_xx);
    }

    #[test]
    fn scheme_size_must_match() {
        let ds = tiny();
        let err = build_scheme(&SchemeSpec::Categorical { p: vec![0.5, 0.5] }, &ds.x).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn rescaled_noise_map_follows_mask() {
        let spec = GeneratorSpec::Heteroscedastic {
            n: 10,
            d: 2,
            rescale_fraction: 0.3,
            rescale_factor: 3.0,
            entry_std: 1.0,
            unit_norm: true,
            noise_map: NoiseMap::Rescaled {
                rescaled_std: 0.1,
                other_std: 1.0,
            },
            w_star: None,
            seed: 5,
        };
        let data = generate(&spec).unwrap();
        let mask = data.rescaled.unwrap();
        assert_eq!(mask.iter().filter(|m| **m).count(), 3);
        let sigma = data.dataset.sigma_eps.unwrap();
        for (i, m) in mask.iter().enumerate() {
            let want: f64 = if *m { 0.1 } else { 1.0 };
            assert_eq!(sigma[(i, i)], want * want);
        }
    }
}
