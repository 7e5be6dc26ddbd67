//! Command-line tools and the HTTP authoring service around
//! `stancegraph-core`.

pub mod cli;
pub mod service;
