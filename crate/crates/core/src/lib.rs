//! Fundamental solutions of Tonelli Lagrangians, Lax-Oleinik operators and
//! the intrinsic Lasry-Lions regularization of discounted Hamilton-Jacobi
//! equations, with sampling probes for the regularity statements behind them.

pub mod action;
pub mod discounted;
pub mod error;
pub mod grid;
pub mod lagrangian;
pub mod lasrylions;
pub mod laxoleinik;
mod linalg;
pub mod probe;
pub mod regularity;
pub mod search;

pub use error::{Error, ErrorClass, Result};

/// Version of this library.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
