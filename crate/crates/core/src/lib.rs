pub mod clock;
pub mod collector;
pub mod sampler;
pub mod seed;
pub mod store;
pub mod study;
pub mod metrics;
pub mod config;
pub mod pipeline;
