//! Iterative multi-view texture painting for UV-mapped triangle meshes.
//!
//! A mesh is rendered from a fixed sequence of viewpoints. Each view is split
//! into keep / refine / generate regions by comparing the current viewing angle
//! against a per-texel cache of the best angle seen so far, a denoiser backend
//! paints the view under a blended-latent schedule, and the result is projected
//! back onto the UV atlas.
//!
//! The crate also ships the spectral mesh augmentation used to build texture
//! transfer datasets and two editing modes (text and scribble).

pub mod atlas;
pub mod canvas;
pub mod mesh;
pub mod pipeline;
pub mod projection;
pub mod render;
pub mod sampler;
pub mod spectral;
pub mod trimap;

pub use atlas::TextureAtlas;
pub use canvas::{ColorImage, Plane};
pub use mesh::{load_mesh, naive_uv_chart, Mesh, MeshError};
pub use render::{render, RenderOutput, Viewpoint};
pub use sampler::{DenoiserBackend, MockDenoiser};
pub use trimap::{Label, MetaTexture, Trimap};

/// Geometry is carried in double precision; images in single precision.
pub type Vec3 = nalgebra::Vector3<f64>;
