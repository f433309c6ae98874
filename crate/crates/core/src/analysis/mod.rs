//! Scaling analysis: compute-optimal frontier, power-law fits, break
//! detection, incremental cost-effectiveness and rank correlation.

mod frontier;
mod icer;
mod powerlaw;
mod spearman;

pub use frontier::{compute_optimal_frontier, log_bin_edges, FrontierPoint, DEFAULT_BINS};
pub use icer::{icer, IcerEntry, LadderRung, ICER_FLOPS_UNIT};
pub use powerlaw::{
    detect_break, fit_power_law, fit_power_law_log, r_squared, BreakFit, PowerFit,
    NO_BREAK_DELTA,
};
pub use spearman::{average_ranks, spearman, PValueMethod, SpearmanResult, EXACT_MAX_N};
