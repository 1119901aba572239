pub mod dsp;
pub mod error;
pub mod fft;
pub mod frame;
pub mod harness;
pub mod plant;
pub mod receiver;
pub mod signal;
pub mod transmitter;
pub mod units;

pub use error::{Error, Result};
pub use signal::{superpose, Band, SampledField, SpectralTransfer};
