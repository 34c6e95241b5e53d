//! Command-line workflows: denoise / inpaint / sr / metrics / corrupt over
//! the cube container, plus run-config handling and false-color export.

pub mod commands;
pub mod config;
pub mod io;

pub use commands::run_cli;
