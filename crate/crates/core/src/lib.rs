//! Single-image material map estimation with render-space uncertainty.
//!
//! The crate covers a planar GGX renderer, per-map and render-space error
//! metrics, an artifact detector for specular/roughness maps, Monte-Carlo
//! dropout uncertainty, a small trainable patch predictor, a procedural
//! textile generator and an uncertainty-driven active-learning loop.

pub mod active;
pub mod error;
pub mod io;
pub mod material;
pub mod math;
pub mod metrics;
pub mod predictor;
pub mod render;
pub mod synth;
pub mod uncertainty;

pub use error::{Error, Result};
pub use material::{ImageGrid, MapStack, NormalMap};
pub use math::Vec3;
pub use render::{Direction, RenderSet};
