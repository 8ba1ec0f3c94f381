//! Command implementations and the HTTP session service behind the `demoa`
//! binary.

pub mod commands;
pub mod server;
