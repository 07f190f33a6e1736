//! Edit-order recovery from commit history and flow-aware evaluation of
//! next-edit suggestion systems.

pub mod corpus;
pub mod flow;
pub mod gateway;
pub mod recovery;
pub mod twin;
pub mod flow_filter;
pub mod metrics;
