//! Edge-based 6-DoF grasp detection on single-view point clouds.
//!
//! A grasp is parameterised by a pair of cloud points: an *approach* point
//! the gripper moves toward and a *contact* point whose surface normal fixes
//! the closing direction. Candidate pairs around each approach point are
//! scored in one pass by a graph network over the approach point's local
//! neighbourhood, either a conventional scalar-feature network trained with
//! rotation augmentation or a vector-feature variant whose scores are
//! rotation-invariant by construction. A synthetic scene generator, an
//! analytic depth-camera model and an antipodal grasp oracle close the loop
//! so training and evaluation run end to end without a simulator.
//!
//! See the `examples/` directory for runnable walkthroughs of each stage and
//! the `edgegrasp` binary for the file-based pipeline
//! (`gen-scenes`, `train`, `detect`, `eval`).

pub mod autodiff;
pub mod error;
pub mod grasp;
pub mod io;
mod kdtree;
pub mod pointcloud;
pub mod sampler;
pub mod rng;

pub use error::{Error, Result};
pub use grasp::{EdgeGrasp, GraspRecord, GraspScorePose, GripperSpec};
pub use pointcloud::{KnnGraph, PointCloud};
