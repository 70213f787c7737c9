//! Perception and dynamics predictive models trained separately and composed
//! into one integrated model for sampling-based model-predictive control, with
//! a conventional two-level hierarchy as the baseline and a deterministic 2D
//! cluttered-room simulator to compare them in.

mod binio;
pub mod datastore;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod models;
pub mod planner;
pub mod sim;
pub mod tensor;

pub use error::{Error, ErrorClass, Result};
