//! ACIT: attention-guided cross-modal interaction transformer for
//! pedestrian crossing-intention prediction, built on a small reverse-mode
//! autodiff engine.

pub mod ammi;
pub mod attention;
pub mod avmi;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod mmff;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;
pub mod synth;
pub mod tensor;
pub mod tfa;
pub mod train;
pub mod tsr;

pub use config::{ModelConfig, Variant, VisualInput};
pub use error::{AcitError, Result};
pub use model::{AcitModel, ClipInput};
pub use params::ParamSet;
pub use rng::Rng;
pub use tape::{Grads, Tape, Var};
pub use tensor::{DType, Scalar, Tensor};
