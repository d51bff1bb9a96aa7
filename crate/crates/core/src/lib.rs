//! Building blocks for translating manipulation videos into a shared
//! pose-indicator representation and back.

pub mod clip;
pub mod datapipe;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod h2rep;
pub mod mask;
pub mod perception;
pub mod raster;
pub mod scene_sim;
pub mod video;

pub use clip::{Clip, SimTruth};
pub use error::{Error, Result};
pub use geometry::{CameraParams, Pose2D, Pose2DTrack, Pose6D};
pub use mask::MaskSequence;
pub use video::{Frame, VideoArray};
