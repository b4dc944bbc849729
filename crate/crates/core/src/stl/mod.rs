//! Signal temporal logic formulae and their robustness over discrete-time
//! traces.
//!
//! Three semantics are supported: classical min/max spatial robustness, the
//! arithmetic-geometric mean (AGM) variant over normalized margins, and a
//! smooth-cumulative variant built on log-sum-exp.

mod formula;
mod parse;
mod robustness;
mod trace;

pub use formula::{Comparison, Formula, Interval, Predicate, DEFAULT_SCALE};
pub use parse::parse_formula;
pub use robustness::{
    agm_and, agm_or, cumulative_or, eval_agm, eval_classical, eval_smooth, rank_trajectories,
    robustness, softmax, softmin, Metric, DEFAULT_SHARPNESS,
};
pub use trace::Trace;
