//! Deterministic finite-horizon simulator for stagewise constructions on
//! computably enumerable sets.

pub mod check;
pub mod error;
pub mod guesser;
pub mod harness;
pub mod markers;
pub mod node;
pub mod oracle;
pub mod osp2;
pub mod pairing;
pub mod pinball;
pub mod scenario;
pub mod trace;
pub mod tree;
pub mod tree15;
pub mod universe;

pub use error::{Error, Result};
