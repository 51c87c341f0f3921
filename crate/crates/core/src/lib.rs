pub mod attack;
pub mod clock;
pub mod error;
pub mod estimators;
pub mod io;
pub mod measurement;
pub mod scenario;

pub use error::{Error, Result};
