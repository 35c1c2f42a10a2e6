//! Geodesic flow, complex-phase Fourier integral kernels and transport coefficients
//! for wave equations on 2-step Carnot groups.

pub mod carnot;
pub mod cli;
pub mod decompose;
pub mod error;
pub mod fio;
pub mod flow;
pub mod numerics;
pub mod phase;
pub mod transport;
pub mod verify;

pub use carnot::{Covector, Group2Step, GroupClassification, Point};
pub use error::{Error, Result};
