//! From-scratch engine for the SeesawFaceNets family of mobile
//! face-verification models.
//!
//! The crate covers the full pipeline at desk scale:
//!
//! - [`tensor`]: dense NCHW tensors over f32/f64.
//! - [`ops`]: convolution, batch norm, activations, pooling, linear, with
//!   layer-local backward passes ([`layer`]).
//! - [`blocks`]: Seesaw-shuffle / Seesaw-share bottlenecks (uneven grouped
//!   pointwise convolutions), squeeze-and-excitation, the inverted-residual
//!   baseline block, and the pooled 1x1 downsample skip branch.
//! - [`arch`]: the published layer tables as declarative specs plus a builder
//!   producing executable graphs; [`specfmt`] is their text form.
//! - [`analytics`]: the parameter / multiply-accumulate cost model.
//! - [`training`]: ArcFace head, momentum SGD, the stepped LR schedule and a
//!   fit loop over identity datasets.
//! - [`verify`]: pixel normalization, cosine scoring and 10-fold
//!   best-threshold verification accuracy.
//! - [`serialize`]: the `SSFN` binary weight container (bit-exact round trip).

pub mod analytics;
pub mod arch;
pub mod blocks;
pub mod error;
pub mod image;
pub mod layer;
pub mod ops;
pub mod rng;
pub mod scalar;
pub mod serialize;
pub mod specfmt;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use ops::Mode;
pub use scalar::{DType, Scalar};
pub use tensor::{Shape, Tensor};
