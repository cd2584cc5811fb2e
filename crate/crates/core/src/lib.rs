//! Monte Carlo laboratory for Berry-Esseen rates of sphere-randomized
//! sums of martingale differences.
//!
//! The library estimates the expected conditional Kolmogorov distance
//! between `S_n(theta) = sum_j theta_j d_j` (theta uniform on the unit
//! sphere, `d` a row of a martingale-difference array) and its Gaussian
//! reference, evaluates the bound quantities entering the theoretical rate
//! `(1 + v_n)/n`, and numerically checks the characteristic-function and
//! Gaussian-mixture inequalities behind it.

pub mod charfn;
pub mod distance;
mod erf;
pub mod error;
pub mod gaussmix;
pub mod harness;
pub mod martingales;
pub mod quantities;
pub mod ratefit;
pub mod sphere;
pub mod streams;

pub use error::{Error, Result};
pub use streams::{derive_stream, RngStream};
