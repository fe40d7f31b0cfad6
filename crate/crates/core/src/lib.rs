pub mod attention;
pub mod cluster;
pub mod encoders;
pub mod error;
pub mod io;
pub mod model;
pub mod numcore;
pub mod panel;
pub mod pipeline;
pub mod seed;
pub mod stats;
pub mod varma;

pub use error::{Error, Result};
