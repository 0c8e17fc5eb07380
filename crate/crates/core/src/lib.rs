pub mod error;
pub mod linalg;

pub use error::{Error, Result};
pub mod cli;
pub mod model;
pub mod robust;
pub mod sim;
pub mod stability;
pub mod switched;
