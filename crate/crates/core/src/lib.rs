pub mod autodiff;
pub mod contact;
pub mod container;
pub mod decouple;
pub mod diffusion;
pub mod error;
pub mod hoi_core;
pub mod interactor;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod synthkit;

pub use error::{Error, Result};
