pub mod error;
pub mod inference;
pub mod linalg;
pub mod matrix_variate;
pub mod model_post;
pub mod stationary_var;
pub mod structured_prior;

pub use error::{Error, Result};
