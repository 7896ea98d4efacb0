//! Ego-to-exo view synthesis for teleoperated vehicles.
//!
//! A bounded buffer of past egocentric frames and their camera poses is used
//! to render a third-person view: a point cloud of the vehicle is transferred
//! from the current camera pose into a past (reference) camera and splatted
//! onto that frame's image. A global map of the trajectory, scene features and
//! the placed vehicle model is maintained alongside.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod buffer;
pub mod geom;
pub mod raster;
pub mod rov;
pub mod sim;
pub mod map;
pub mod synthesis;
pub mod validation;
