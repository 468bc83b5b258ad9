//! Clipping, the Gaussian mechanism and Rényi-DP accounting.

mod accountant;
mod mechanism;
mod sensitivity;

pub use accountant::{
    calibrate_sigma, certify_sigma, default_alpha_grid, epsilon_for_sigma, rdp_gaussian,
    rdp_subsampled_gaussian, sigma_for_epsilon, MechanismEvent, MechanismSchedule, PrivacyLedger,
    SensitivityConvention,
};
pub use mechanism::{clip, gaussian_mechanism, noise_vector};
pub use sensitivity::{empirical_sensitivity_probe, SensitivityReport};
