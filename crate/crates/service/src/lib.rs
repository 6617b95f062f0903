//! Recommendation service: persistence, pipeline orchestration, HTTP routes
//! and the live model clients.

pub mod config;
pub mod experiment;
pub mod http;
pub mod live;
pub mod service;
pub mod store;

pub use config::{BackendChoice, Config};
pub use service::{cache_key, Mode, RecommendationItem, RecommendationResponse, Service, ServiceError};
pub use store::KvStore;
