//! Core engine for guide-image retrieval.

pub mod catalog;
pub mod config;
pub mod embedders;
pub mod fusion;
pub mod genhub;
pub mod ingest;
pub mod limit;
pub mod pixels;
pub mod synthbench;
pub mod vecstore;
