//! LED-clock exposure timestamps: encoding, synthetic rendering, image and
//! 3D decoding, clock-model fitting, stream alignment and evaluation metrics.

pub mod align;
pub mod blob;
pub mod board;
pub mod clock;
pub mod decoder;
pub mod fit;
pub mod ftk;
pub mod geometry;
pub mod homography;
pub mod image;
pub mod marker;
pub mod outcome;
pub mod render;
pub mod scene;

pub use board::BoardGeometry;
pub use clock::{ExposureWindow, Sample, TimeModel};
pub use geometry::{CameraModel, RigidPose};
pub use homography::Homography;
pub use image::GrayImage;
