//! Library backing the `convcut` binary; commands are exposed here so the
//! integration tests can drive them in-process.

pub mod commands;
pub mod config;

use convcut_core::error::Error;

/// Exit codes: 0 success, 1 verification failure, 2 usage/config error,
/// 3 I/O error.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => 3,
        _ => 2,
    }
}
