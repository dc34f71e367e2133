//! Desk-scale environments: named tabular instances, the Merton portfolio
//! problem with transaction costs, and the penalty-zone lane.

pub mod instances;
pub mod lane;
pub mod merton;
