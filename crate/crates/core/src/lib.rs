pub mod adapt;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod features;
pub mod loss;
pub mod model;
pub mod runconfig;
pub mod selfcheck;
pub mod substrate;
pub mod train;

pub use error::{Error, Result};
