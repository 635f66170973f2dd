pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod decomposition;
pub mod dib;
pub mod error;
pub mod info;
pub mod models;
pub mod optim;
pub mod oracle;
pub mod probes;
pub mod rng;
pub mod tensor;

pub use error::{DibError, Result};
pub use tensor::Tensor;
