//! Critical-flow rerouting for traffic engineering.
//!
//! Most traffic stays on ECMP shortest paths while a small set of critical
//! flows is rerouted by a linear program that minimizes the maximum link
//! utilization. The critical set is chosen by a policy network trained with
//! REINFORCE, or by one of the heuristic selectors for comparison.

pub mod checkpoint;
pub mod ecmp;
pub mod lp;
pub mod metrics;
pub mod policy;
pub mod selectors;
pub mod topology;
pub mod traffic;
pub mod trainer;

pub use ecmp::{EcmpFractions, LinkLoads};
pub use topology::{flow_index, flow_of_index, Link, Topology};
pub use traffic::{Dataset, TrafficMatrix, TrafficModel};
