//! Command-line front end for `pdstab-core`: TOML configuration, CSV/JSON
//! emitters and deterministic parallel drivers.

pub mod config;
pub mod output;
pub mod parallel;
pub mod run;
