pub mod clustering;
pub mod dynamics;
pub mod error;
pub mod lp;
pub mod population;
pub mod privacy;
pub mod protocol;
pub mod scenario;
pub mod scheduler;

pub use error::{Error, Result};
