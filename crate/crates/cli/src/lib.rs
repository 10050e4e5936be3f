//! Command plumbing for the `longic` binary and the HTTP service.

pub mod commands;
pub mod service;

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    /// Training or another runtime step failed.
    pub const FAILURE: i32 = 1;
    /// Invalid configuration, spec or input data.
    pub const CONFIG: i32 = 2;
    pub const UNKNOWN_PATIENT: i32 = 3;
    pub const BIND: i32 = 4;
}
