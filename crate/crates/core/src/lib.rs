pub mod autodiff;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod mft;
pub mod modality;
pub mod nn;
pub mod report;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use data::Trial;
pub use error::{Error, Result};
pub use modality::{Modality, CLASS_NAMES, NUM_CLASSES};
pub use tensor::Tensor;
