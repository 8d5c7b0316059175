//! Parameter-space reduction for hull design studies.
//!
//! The crate morphs triangulated hulls with free-form deformation, computes
//! hydrostatics on the morphed geometry, estimates active subspaces of a
//! scalar output from input/output samples and fits polynomial response
//! surfaces over the active variables. Supporting pieces cover quaternion
//! rigid-body kinematics and the extrapolation of oscillating resistance
//! histories to their steady value.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below name the double-precision instantiations used by the
//! pipeline and the command line tool.

pub mod error;
pub mod extrapolate;
pub mod ffd;
pub mod geometry;
pub mod linalg;
pub mod pipeline;
pub mod rigidbody;
pub mod scalar;
pub mod subspace;
pub mod surface;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Vec3f64 = linalg::Vec3<f64>;
pub type TriMesh64 = geometry::TriMesh<f64>;
pub type FlowConstants64 = geometry::FlowConstants<f64>;
pub type FfdLattice64 = ffd::FfdLattice<f64>;
pub type Quaternion64 = rigidbody::Quaternion<f64>;
pub type RigidState64 = rigidbody::RigidState<f64>;
pub type SampleSet64 = subspace::SampleSet<f64>;
pub type ActiveSubspace64 = subspace::ActiveSubspace<f64>;
pub type PolySurface64 = surface::PolySurface<f64>;
pub type TimeSeries64 = extrapolate::TimeSeries<f64>;

pub type TriMesh32 = geometry::TriMesh<f32>;
pub type FfdLattice32 = ffd::FfdLattice<f32>;
pub type Quaternion32 = rigidbody::Quaternion<f32>;
