//! Dynamic timing analysis with digitized hybrid gate models.

pub mod characterize;
pub mod circuit;
pub mod delay;
pub mod gate_core;
pub mod gate_models;
pub mod numerics;
pub mod signals;
