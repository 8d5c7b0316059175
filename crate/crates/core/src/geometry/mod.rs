//! Triangle meshes, STL I/O, surface and volume integrals, plane clipping
//! and hydrostatics.

mod hydro;
mod integrals;
mod mesh;
pub mod primitives;
mod stl;

pub use hydro::{friction_drag, froude, hydrostatic_equilibrium, ittc57_cf, FlowConstants, HydroState};
pub use integrals::{
    clip_below_plane, clip_below_plane_detailed, pressure_force, pressure_resistance, signed_volume, ClippedMesh,
};
pub use mesh::TriMesh;
pub use stl::{parse_stl, read_stl, to_ascii_stl, to_binary_stl, write_stl};
