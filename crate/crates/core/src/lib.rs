//! Stereographic Daubechies wavelet frames on the two-sphere and an adaptive
//! (Lepski-type) projection density estimator built on them.

pub mod aww;
pub mod cubes;
pub mod daubechies;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod frame;
pub mod io;
pub mod sampling;
pub mod sphere;

pub use error::{Error, Result};
