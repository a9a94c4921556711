//! Numerics for a one-stage underwater detection pipeline.
//!
//! The crate covers the parts of a YOLO-style detector that do not need a
//! trained network: the IoU similarity family and its gradients, the CIoU plus
//! random-background loss, a 12-shape anchor family, reference forward passes
//! for squeeze-excitation, two-stage CSP and dilated convolution blocks, image
//! preprocessing, DIoU-NMS / weighted boxes fusion / iterative refinement, and
//! COCO-style AP/AR evaluation. The [`pipeline`] module wires everything into
//! the file-based workflow driven by the `reefdet` binary.

pub mod anchors;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod nn;
pub mod pipeline;
pub mod postprocess;
pub mod preprocess;
pub mod rng;

pub use error::{Error, ErrorKind, Result};
pub use geometry::{BBox, BetaMode};
pub use postprocess::Detection;
