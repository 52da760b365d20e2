//! Neural chroma intra prediction.
//!
//! The crate covers the whole desk-scale pipeline: image ingestion and YUV
//! conversion ([`media_io`]), block and boundary extraction ([`block`]), a
//! small tensor engine with hand-scheduled reverse-mode gradients
//! ([`tensor`]), the three attention-based predictors ([`net`]), a
//! least-squares cross-component linear model ([`cclm`]) and the training
//! and evaluation harness ([`train`]).

pub mod block;
pub mod cclm;
pub mod error;
pub mod media_io;
pub mod net;
pub mod tensor;
pub mod train;

pub use block::{BlockSample, BoundaryArray, LocationMaps};
pub use cclm::LinearModel;
pub use error::{Error, Result};
pub use media_io::{ChromaFormat, Frame, Plane, RgbImage};
pub use net::{ModelConfig, ModelParams, Variant};
pub use tensor::{Scalar, Tensor};
pub use train::{EvalReport, TrainConfig};
