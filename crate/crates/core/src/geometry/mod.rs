//! Deterministic point-set kernels: sampling, neighborhoods, normals and
//! missing-part extraction. Every function here is pure.

mod cloud;
mod eigen;
mod missing;
mod neighbors;
mod normals;
mod sampling;

pub use cloud::{cross, dot, norm, squared_distance, sub, Point3, PointCloud};
pub use eigen::{jacobi, symmetric_eigen3, Mat3, SymmetricEigen3};
pub use missing::{
    extract_missing_part, point_to_plane_distance, point_to_point_distance, ExtractOptions,
    PartitionResult,
};
pub use neighbors::{knn, nearest_neighbors};
pub use normals::{covariance, estimate_normals, estimate_normals_with, NormalEigen, NormalField};
pub use sampling::{downsample, farthest_point_sample, farthest_point_sample_default};

pub(crate) use neighbors::knn_points;
