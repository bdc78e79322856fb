pub mod aggregate;
pub mod config;
pub mod ingest;
pub mod metamodel;
pub mod pipeline;
pub mod segmentation;
pub mod sim;
pub mod timeseries;
