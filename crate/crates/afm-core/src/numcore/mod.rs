//! Minimal dense numerics: row-major `f64` matrices, a reverse-mode gradient
//! tape over a fixed operation set, named parameter sets, and Adam.

pub mod adam;
pub mod ctx;
pub mod matrix;
pub mod params;
pub mod tape;

pub use adam::Adam;
pub use ctx::{EvalCtx, OpCtx, TapeCtx};
pub use matrix::Matrix;
pub use params::ParamSet;
pub use tape::{NodeId, Tape};
