//! Sample-complexity calculators, Monte Carlo checks of the noise tail
//! bounds, and the empirical privacy auditor.

pub mod audit;
pub mod bounds;
pub mod gap;
pub mod lemmas;
pub mod stats;

pub use audit::{audit_privacy, AuditConfig, AuditInstance, AuditReport};
pub use bounds::{bound_dvp, bound_nonprivate, bound_pvp_full, bound_pvp_intermediate, BoundInputs};
pub use gap::measure_gap;
pub use lemmas::{check_lemma11, check_lemma12, check_lemma7, check_lemma8, LemmaInstance, LemmaReport};
