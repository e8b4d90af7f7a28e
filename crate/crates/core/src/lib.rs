pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod linalg;
pub mod operator;
pub mod oracle;
pub mod priors;
pub mod problems;
pub mod qgkb;
pub mod rng;
pub mod special;
