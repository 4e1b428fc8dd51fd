//! Synthetic dual-venc 4D Flow MRI, super-resolution GAN training and
//! stratified hemodynamic evaluation.

pub mod cli;
pub mod error;
pub mod evalkit;
pub mod fft;
pub mod io;
pub mod losses;
pub mod mrsim;
pub mod net;
pub mod patching;
pub mod phantom;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
