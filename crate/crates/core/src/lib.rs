//! Reinforcing sequential risk decisions modelled as a generalized Pólya urn.
//!
//! - [`process`]: the decision recurrence, biased variant, sampling and exact
//!   small-case oracles.
//! - [`limit`]: Beta limit law, Kolmogorov–Smirnov distance, moments and
//!   martingale checks.
//! - [`cohort`]: deterministic parallel multi-group simulation and disparity
//!   metrics.
//! - [`scoring`]: table-driven nine-factor pretrial risk scorer.
//! - [`regression`]: OLS with standard errors and a synthetic cohort generator.

pub mod cohort;
pub mod error;
pub mod limit;
pub mod process;
pub mod regression;
pub mod rng;
pub mod scoring;
pub mod special;

pub use cohort::{
    disparity_metrics, extreme_mass, run_cohort, run_cohort_with_threads, CheckpointGrid,
    CohortResult, CohortSpec, DisparityReport, ExtremeMass, GroupResult, GroupSpec,
};
pub use error::{Error, ErrorKind, Result};
pub use limit::{
    beta_cdf, ks_statistic, limit_beta_params, martingale_check, sample_moments, BetaParams,
    EmpiricalDistribution, Moments,
};
pub use process::{
    biased_step, closed_form_p, gamma_at, sample_outcome, sequence_probability,
    simulate_trajectory, step, BiasSpec, ClampPolicy, DecisionOutcome, ProcessState, Trajectory,
    TrajectoryParams, UrnParams,
};

pub use regression::{
    generate_synth_cohort, ols_fit, DesignMatrix, RegressionResult, SynthCohortSpec,
};
pub use scoring::{
    derive_factors, load_table, score, DefendantRecord, HistoryEvent, RiskScores, ScoreTable,
};
