pub mod bounds;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod learn;
pub mod marginals;
pub mod polyapprox;
pub mod privacy;
pub mod seed;
pub mod synth;
