//! Conservative-cascade models and multifractal analysis of IP address sets.

pub mod address;
pub mod alloc;
pub mod anomaly;
pub mod cascade;
pub mod error;
pub mod fit;
pub mod moments;
pub mod quadrature;

pub use error::{Error, Result};
