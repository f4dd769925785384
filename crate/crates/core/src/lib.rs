pub mod geometry;
pub mod kalman;
pub mod spline;
pub mod association;
pub mod ingest;
pub mod scenario;
pub mod metrics;
pub mod pipeline;
