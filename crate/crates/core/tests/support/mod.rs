//! Loop-level oracles shared by integration tests.

pub mod attention;
pub mod ciede2000;
