pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dsp;
pub mod error;
pub mod flow;
pub mod model;
pub mod numerics;
pub mod seq2seq;
pub mod synthesis;
pub mod trainer;
pub mod vocoder;

pub use error::{Error, Result};
