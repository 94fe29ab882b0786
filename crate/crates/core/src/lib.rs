//! Retrieval-based camera relocalization: pose algebra, frustum overlap,
//! pair mining, a block-structured siamese encoder with layerwise pose
//! heads, auxiliary losses, an exact nearest-neighbour index, training and
//! evaluation, and 7-Scenes style I/O.

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod frustum;
pub mod index;
pub mod losses;
pub mod mining;
pub mod model;
pub mod pose;
pub mod train;
pub mod workflow;

pub use error::{RelocError, Result};
pub use pose::{Pose, RelativePose, UnitQuaternion};
