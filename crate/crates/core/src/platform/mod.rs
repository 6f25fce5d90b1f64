//! Ingestion, persistence, the review queue and the HTTP service.

pub mod engine;
pub mod ingest;
pub mod persist;
pub mod queue;
pub mod service;
