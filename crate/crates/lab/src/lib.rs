//! Files, configuration, sweeps and reports around `selfmodel-core`, plus the
//! `selfmodel` command line.

pub mod cli;
pub mod config;
pub mod formats;
pub mod manifest;
pub mod svg;
pub mod sweep;
pub mod table;
