//! Closed-form ground truth used to verify the learned machinery:
//! Gaussian and mixture perturbed scores, analytic drifts, Gaussian KL,
//! MMD two-sample statistics with permutation thresholds, DTW distance,
//! and a central finite-difference gradient checker.

pub mod dtw;
pub mod fd;
pub mod gaussian;
pub mod mmd;
pub mod quad;

pub use dtw::dtw_distance;
pub use fd::{finite_diff_grad, finite_diff_vec};
pub use gaussian::{
    gaussian_kl, moment_fit, point_mass_drift, point_mass_score, weighted_kl_1d, GaussianSpec,
    MixtureSpec, OracleError,
};
pub use mmd::{mmd, permutation_test, MmdTest};
