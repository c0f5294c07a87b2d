//! Test-time refinement of relative depth maps by re-lighting.
//!
//! A disparity map is turned into normals, the input image is re-lit with a
//! randomized Blinn-Phong shader, and a guidance scorer rates the re-lit
//! image. Score-distillation gradients flow back through hand-written
//! adjoints into the disparity. The crate also ships a classical
//! shape-from-shading baseline and the depth evaluation protocols.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod grad;
pub mod grid;
pub mod guidance;
pub mod io;
pub mod phantom;
pub mod refine;
pub mod sfs;
pub mod shading;
pub mod vec3;

pub use error::{Error, Result};
pub use grid::{MaskGrid, RgbGrid, ScalarGrid, Vec3Grid};
