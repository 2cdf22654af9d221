pub mod autodiff;
pub mod error;
pub mod networks;
pub mod training;

pub use error::{NnError, Result};
