//! Library surface of the `hanatomy` CLI: run configuration and the four
//! pipeline commands (`gen`, `train`, `analyze`, `epochs`).

pub mod commands;
pub mod config;
