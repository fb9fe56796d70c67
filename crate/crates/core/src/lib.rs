pub mod app;
pub mod curvature;
pub mod elliptic;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod nonlinear;
pub mod oracle;

pub use error::{Error, Result};
