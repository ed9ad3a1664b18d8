//! The continuum-of-agents model: opinion functions on [0, 1], the
//! interaction operator, the Picard solver and fixed-point analysis.

mod fixed_point;
mod function;
pub mod io;
mod operator;
mod solver;

pub use fixed_point::{check_fixed_point, extract_continuum_clusters, FixedPointClass, FixedPointReport, PlateauGroup};
pub use function::OpinionFunction;
pub use operator::{
    conservative_rates, integral_of_operator, lipschitz_constant, operator_at, operator_l, rate_bounds_check,
    RateBounds,
};
pub use solver::{
    choose_segment, picard_iterate, solve_continuum, ContinuumOptions, ContinuumTrajectory, PicardOptions,
    PicardSegment, SegmentRecord, SegmentRule,
};
