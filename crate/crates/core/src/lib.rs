pub mod astro;
pub mod dataset;
pub mod discriminators;
pub mod error;
pub mod eval;
pub mod localization;
pub mod nn;
pub mod reshape;
pub mod sensor;
pub mod synth;
pub mod util;
pub mod weather;

pub use astro::{GeoCoord, NightWindow};
pub use error::{Error, ErrorKind, Result};
