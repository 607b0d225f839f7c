//! Std companion of `crpo-core`: file formats, model-service providers,
//! scoring, training, evaluation and sweep pipelines, run manifests and the
//! `crpo` command-line tool.
pub mod cli;
pub mod config;
pub mod digest;
pub mod evaluate;
pub mod manifest;
pub mod providers;
pub mod records;
pub mod scoring;
pub mod sweep;
pub mod training;
