//! Least squares by randomly weighted gradient descent: the iteration, its
//! exact first and second moments, closed-form bounds, and Monte Carlo
//! checks of all of them.

pub mod bounds;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod moments;
pub mod montecarlo;
pub mod problem;
pub mod rng;
pub mod weighting;

pub use data::{Dataset, GaussianRescaled};
pub use dynamics::{run_coupled_pair, run_trajectory, RunOptions, StepSchedule, TrajectoryRecord};
pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use moments::{MomentContext, MomentState};
pub use problem::{build_unweighted_problem, build_weighted_problem, WeightedProblem};
pub use weighting::{ContinuousLaw, WeightingMoments, WeightingScheme};
