//! Compile, verify and run small automation apps on a KNX installation.

pub mod app;
pub mod compiler;
pub mod fixtures;
pub mod lang;
pub mod library;
pub mod physical;
pub mod runtime;
pub mod simbus;
pub mod value;
pub mod verifier;
pub mod wire;
