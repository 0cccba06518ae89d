//! Library side of the `mobps` binary: configuration, command execution and
//! the verification battery.

pub mod config;
pub mod run;
pub mod verify;

pub use config::{parse_file, Command, ConfigErrors, Format, ModelKind, Overrides, RunConfig};
pub use run::{run, Exit, Failure};
