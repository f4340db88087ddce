//! Linear programming: the simplex solver, the critical-flow rerouting
//! formulation and the delay oracle.

pub mod delay;
pub mod rerouting;
pub mod simplex;

pub use delay::{evaluate_delay, solve_delay_optimal, DelayError, DelayOptimum, DEFAULT_MAX_ITERS, DEFAULT_TOL};
pub use rerouting::{
    build_rerouting_lp, default_epsilon, max_constraint_violation, optimal_routing_violation, reroute, solve_optimal_all_flows,
    solve_rerouting, OptimalRouting, ReroutingSolution,
};
pub use simplex::{Constraint, LpError, LpProblem, LpSolution, Relation};
