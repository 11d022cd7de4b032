//! Barodesy element tests, synthetic datasets and PCA-NN parameter
//! identification from oedometric axial stress curves.

pub mod constitutive;
pub mod container;
pub mod datagen;
pub mod error;
pub mod nn;
pub mod pca;
pub mod pipeline;
pub mod tensor;

pub use constitutive::{MaterialParams, MaterialState, PARAM_NAMES};
pub use element_test::{InitialState, LoadingSchedule, StressSeries};
pub use error::{Error, Result};
pub use tensor::{SkewTensor3, SymTensor3};
