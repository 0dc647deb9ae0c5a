//! Redundant holographic associative memory, the Associative LSTM, baseline
//! recurrent cells, synthetic memorization tasks, and a small training
//! harness built on a reverse-mode differentiation tape.

pub mod autodiff;
pub mod cells;
pub mod cli;
pub mod complex;
pub mod error;
pub mod memory;
pub mod rng;
pub mod tasks;
pub mod training;

pub use complex::{ComplexVec, Permutation};
pub use error::{Error, Result};
pub use memory::MemoryTrace;
