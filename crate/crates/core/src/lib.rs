pub mod acceptance;
pub mod currents;
pub mod dualform;
pub mod dynamics;
pub mod error;
pub mod forms;
pub mod quad;
pub mod rng;
pub mod smeasure;
pub mod solenoid;
pub mod transversal;
pub mod trig;
pub mod util;

pub use error::{Error, Result};
