pub mod archive;
pub mod error;
pub mod eval;
pub mod exec;
pub mod latent;
pub mod model;
pub mod nn;
pub mod objective;
pub mod tools;
pub mod trainer;
pub mod voxel;

pub use error::{Error, Result};
pub use exec::Exec;
pub use model::{Example, ModelConfig, Vsl};
