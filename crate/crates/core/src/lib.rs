pub mod anneal;
pub mod calibration;
pub mod camera;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod image;
pub mod io;
pub mod noise;
pub mod phantom;
pub mod projector;
pub mod recon;
pub mod registration;
pub mod seeds;
pub mod similarity;
pub mod volume;

pub use camera::CArmCamera;
pub use error::{Error, Result};
pub use geometry::{PoseError, RigidTransform};
pub use image::Image2D;
pub use volume::Volume;
