//! Privacy and utility evaluation.

mod attack;
mod audit;
pub mod stats;
mod sweep;
mod utility;

pub use self::attack::{attack_pr_at_k, AttackReport};
pub use self::audit::{
    builtin_instance, dp_audit, sequence_distances, AuditInstance, AuditMetric, AuditOptions, AuditReport, OutputCount,
};
pub use self::sweep::{cell_seed, parameter_sweep, write_sweep_csv, SweepGrid, SweepRow};
pub use self::utility::{utility_report, UtilityReport};
