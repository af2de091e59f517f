pub mod cli;
pub mod corpus;
pub mod crf;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fewshot;
pub mod relation;
pub mod rng;
pub mod seq2seq;
pub mod span;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
