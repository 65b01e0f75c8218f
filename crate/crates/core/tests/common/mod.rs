#![allow(dead_code)]

#[path = "oracle_impl.rs"]
pub mod oracle;
pub mod gradcheck;
pub mod pipeline;
