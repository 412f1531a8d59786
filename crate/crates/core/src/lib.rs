//! Fingertip motion-primitive dictionaries for in-hand manipulation.
//!
//! The pipeline learns a nonnegative dictionary of one-second, five-fingertip
//! motion primitives from demonstrations, plans new trajectories by solving a
//! convex quadratic program over the primitive weights, and checks the result
//! against reachability, collision and contact constraints.
//!
//! * [`frame`]: fingertip frames, poses, trajectories, filtering, flat layout
//! * [`ingest`]: recordings, preprocessing, object point clouds, synthetic data
//! * [`dictionary`]: NMF training, pseudo-inverse reconstruction, generation
//! * [`pose`]: four-point affine fit tying object pose to the weights
//! * [`planner`]: QP construction and the dense dual active-set solver
//! * [`verify`]: the constraint testing kit and its reports

pub mod dictionary;
pub mod error;
pub mod frame;
pub mod ingest;
pub mod planner;
pub mod pose;
pub mod spatial;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use frame::{Finger, FingertipFrame, FlatVector, Pose, Trajectory};
