//! Lightweight end-to-end LiDAR odometry.
//!
//! Two consecutive scans go through a shared set-abstraction layer, a flow
//! embedding layer, two more set-abstraction layers, a mini-PointNet and a
//! small regression head that outputs translation (meters) and Euler angles
//! (degrees). The crate also carries the training loop, RANSAC ground-plane
//! removal, KITTI readers/writers and the KITTI sub-sequence odometry metrics.

pub mod autodiff;
pub mod dataio;
pub mod evaluation;
pub mod geometry;
pub mod neighbors;
pub mod network;
pub mod pointcloud;
pub mod training;
pub mod verify;

pub use geometry::{PoseDelta, RigidTransform, Trajectory};
pub use pointcloud::PointCloud;
