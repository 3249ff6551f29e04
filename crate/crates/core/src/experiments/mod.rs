//! Privacy/accuracy experiment harness: loss curves per privacy level, the
//! tradeoff fit and its utility-based choice of `α`.

pub mod config;
pub mod metrics;
pub mod plot;
pub mod suites;
pub mod tradeoff;

pub use config::{DataSource, ExperimentConfig, Prepared};
pub use metrics::{empirical_loss, loss_curve, misclassification_rate};
pub use suites::{collect_curves, run_convergence_suite, run_experiment, run_mechanism, run_tradeoff_suite, select_rho, Curve};
pub use tradeoff::{choose_alpha, fit_tradeoff, utility_privacy, C6Rule, FitResult, TradeoffModel};
