//! Quantities computed about an instance rather than by training: fixed
//! points, heterogeneity measures, assumption constants, the drift term
//! and closed-form error bounds.

mod constants;
mod drift;
mod fixed_point;
mod heterogeneity;
mod instance;
mod theorem;

pub use constants::{
    admit, check_assumptions, constants, margin, mixing_times, spectral_norm, Admission, AssumptionReport,
    ConstantsReport, Flag,
};
pub use drift::{drift_delta, matrix_power, DriftReport};
pub use fixed_point::{
    averaged_env, default_inits, deterministic_fedsarsa, matrix_form_residual, solve_chi_star, solve_global,
    solve_local, solve_theta_tilde, solve_with_inits, DeterministicRun, FixedPointResult, SolverOptions,
};
pub use heterogeneity::{
    heterogeneity_report, kernel_heterogeneity, measured_zetas, reward_heterogeneity, HeterogeneityReport,
};
pub use instance::Instance;
pub use theorem::{theorem_rhs, BoundCurve, BoundInputs, BoundMode};
