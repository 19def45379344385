//! Command-line front end for the mono-to-binaural pipeline.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 data error
//! (unreadable inputs, refused output directories, skipped clips, checkpoint
//! mismatches), 3 numeric failure (non-finite training loss, failed
//! gradient check).

pub mod commands;
pub mod config;

pub use config::{RunConfig, UsageError};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

/// Exit status for an error, from the first classifiable cause in its chain.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<binaural_core::Error>() {
            return match e {
                binaural_core::Error::Numeric(_) => EXIT_NUMERIC,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}
