//! Randomized response under local differential privacy: channels, estimators,
//! asymptotic loss expansions, trade-off bounds and a Monte Carlo harness.

pub mod analysis;
pub mod bounds;
pub mod error;
pub mod estimation;
pub mod mechanisms;
pub mod simplex;
pub mod simulation;

mod solver;

pub use analysis::{
    alpha, alpha_fdiv, alpha_mse, alpha_tv, boundary_exponent, central_moments, dpi_gap,
    expansion_fdiv, expansion_mse, expansion_tv, nu_table, phi_circulant_spectral, phi_matrix,
    BCoefficient, CentralMoments, ExpansionReport, Metric, NuTable, PhiMatrix,
};
pub use bounds::{
    alpha_upper_uniform, feasibility_curve, feasibility_lower, max_sum_squares_profile,
    minmax_curve, minmax_lower, minmax_upper_step, phi_lower_bound, phi_star, phi_star_entries,
    Regime, TradeoffPoint,
};
pub use error::{Error, Result};
pub use estimation::{
    empirical_type, ml_estimate, ml_estimate_step, mmse_estimate, mmse_estimate_step, raw_estimate,
    waterfill_ml, waterfill_mmse, EmpiricalType, Estimator,
};
pub use mechanisms::{
    circulant_mechanism, compose, epsilon_of, is_eps_private, permutation_mechanism,
    random_eps_private, step_mechanism, CirculantSpec, Mechanism,
};
pub use simplex::{
    f_divergence, mse_distance, project_simplex_euclidean, pullback, pushforward, tv_distance,
    Distribution, FDivergenceSpec, RawVector,
};
pub use simulation::{
    convergence_sweep, escape_probability, exact_escape_probability, monte_carlo_loss,
    monte_carlo_losses, sample_chain, sample_multinomial, sample_output_type, trial_rng,
    write_provenance, LossMetric, LossReport, SweepResult, SweepRow,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Numerical tolerances shared across modules.
pub mod tol {
    /// Slack allowed on user-supplied probability vectors and matrices.
    pub const STRUCTURAL: f64 = 1e-9;
    /// Round trips through `W` and `W^{-1}`.
    pub const ROUND_TRIP: f64 = 1e-10;
    /// Identities that hold exactly in real arithmetic.
    pub const IDENTITY: f64 = 1e-12;
    /// Relative smallest singular value below which a channel counts as singular.
    pub const RANK: f64 = 1e-10;
}
