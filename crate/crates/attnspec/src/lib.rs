//! Interchange IO, the analysis pipeline and report rendering.

pub mod analyze;
pub mod fixture_io;
pub mod render;
pub mod report;
pub mod selftest;
pub mod tensor_io;
