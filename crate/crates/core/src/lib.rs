pub mod align;
pub mod bench;
pub mod cache;
pub mod checkpoint;
pub mod dataio;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod motion;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
