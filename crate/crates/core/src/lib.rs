//! Building blocks for LiDAR-based 3D visual grounding in driving scenes:
//! oriented-box geometry, dataset preparation and synthesis, text encoders,
//! the accuracy protocol, and the prompt annotation pipeline.

pub mod annotate;
pub mod camera;
pub mod datakit;
mod error;
pub mod evalkit;
pub mod geometry;
pub mod labels;
pub mod raster;
pub mod scalar;
pub mod textenc;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Box in double precision, the storage type of every file format.
pub type Box3 = geometry::Box3D<f64>;
/// Box in single precision.
pub type Box3f = geometry::Box3D<f32>;
pub type PointCloud = geometry::PointCloudFrame<f64>;
pub type PointCloudf = geometry::PointCloudFrame<f32>;
pub type Embeddings = textenc::TextEmbeddings<f64>;
pub type Embeddingsf = textenc::TextEmbeddings<f32>;
