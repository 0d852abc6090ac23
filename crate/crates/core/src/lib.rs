pub mod campaign;
pub mod combination;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod models;
pub mod strategy;
pub mod tensor;

pub use error::{Error, Result};
