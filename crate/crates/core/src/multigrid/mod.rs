//! Geometric p-multigrid: coarsening plans, transfer operators, the additive
//! Schwarz smoother and the recursive V-cycle.

mod hierarchy;
mod plan;
mod schwarz;
mod transfer;

pub use hierarchy::{CoarseOperator, HierarchyOptions, Level, MGHierarchy};
pub use plan::{coarser_order, make_coarsening_plan, CoarseningPlan};
pub use schwarz::{build_schwarz, Overlap, SchwarzSmoother};
pub use transfer::{build_transfer, TransferPair};
