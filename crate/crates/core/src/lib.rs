pub mod cavi;
pub mod distributions;
pub mod divergence;
pub mod error;
pub mod nn;
pub mod oracle;
pub mod quadrature;
pub mod rng;
pub mod trace;
pub mod vae;
pub mod vaegan;

pub use error::{Error, Result};
pub use rng::Rng;
