//! Multimodal place recognition over Gaussian-splat scene representations.
//!
//! The crate is organised along the pipeline:
//!
//! * [`scene_io`] reads and writes Gaussian scenes (3D-GS PLY layout), dataset
//!   frame manifests, and generates deterministic synthetic scenes.
//! * [`prep`] builds the LiDAR/camera initialisation prior (frustum culling,
//!   point colouring, ground filtering, box erasing, spherical dome), the
//!   static/dynamic masks, and the image reconstruction losses.
//! * [`voxel`] turns an unordered Gaussian scene into a fixed number of
//!   mean-encoded cylindrical voxels.
//! * [`net`] is the descriptor network (graph convolution, graph max-pooling,
//!   positional fusion, multi-head attention, NetVLAD head) with analytic
//!   gradients.
//! * [`train`] mines triplets by pose distance and optimises the network with
//!   the lazy triplet loss and Adam.
//! * [`retrieval`] builds descriptor databases and scores Recall@K.
//! * [`config`] collects every hyperparameter into one TOML-backed config.

pub mod config;
pub mod error;
pub mod geometry;
pub mod net;
pub mod prep;
pub mod retrieval;
mod rng;
pub mod scene_io;
pub mod train;
pub mod voxel;

pub use config::{PipelineConfig, Variant};
pub use error::{Error, Result};
pub use geometry::{Box3d, Camera, RigidTransform};
pub use net::{Descriptor, NetConfig, NetParams};
pub use scene_io::{Gaussian, GaussianScene, SceneSource};
pub use voxel::{CylGridConfig, VoxelizedScene};
