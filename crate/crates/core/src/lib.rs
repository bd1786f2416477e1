pub mod blackbox;
pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod nnet;
pub mod numerics;
pub mod parallel;
pub mod rejection;
pub mod report;
pub mod uncertainty;
pub mod wrapper;

pub use error::{Error, Result};
