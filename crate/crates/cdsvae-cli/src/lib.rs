//! Artifact formats shared between the binary and its tests.

pub mod pgm;
