pub mod audit;
pub mod cli;
pub mod dataset;
pub mod metrics;
pub mod mining;
pub mod model;
pub mod recourse;
pub mod schema;
