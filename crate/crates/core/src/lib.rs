//! Geometry toolkit for vector displacement maps (VDMs).
//!
//! The crate turns segmented shape parts into plane-attachable patches and
//! fits a neural deformation field from the unit square onto a target surface,
//! producing a VDM image that can be stamped onto planes or UV-mapped meshes.
//!
//! Modules roughly follow the pipeline:
//!
//! - [`mesh`]: triangle meshes, OBJ/PLY I/O, boundary loops, sampling, smoothing
//! - [`winding`]: generalized winding numbers and interior-point filtering
//! - [`lasso`]: voxel-loop part extraction
//! - [`flatten`]: boundary plane fitting, gradient-preserving deformation, tile stitching
//! - [`deformfit`]: the deformation-field MLP, Chamfer fitting and VDM extraction
//! - [`vdm`]: the VDM image, its raw file format and application onto meshes
//! - [`render`]: orthographic normal-map and gray renders at fixed camera poses

pub mod deformfit;
pub mod flatten;
pub mod lasso;
pub mod mesh;
pub mod render;
pub mod rng;
pub mod shapes;
pub mod spatial;
pub mod vdm;
pub mod winding;

mod error;

pub use error::{Error, ErrorClass};
pub use mesh::{BoundaryLoop, OrientedPointSet, TriMesh};
pub use vdm::VdmImage;

#[cfg(test)]
pub(crate) mod testutil {
    pub use crate::shapes::unit_cube;
}
