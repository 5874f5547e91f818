//! End-to-end lane-level map vectorization at desk scale: procedural BEV
//! worlds, a group-wise set-prediction network with contextual prompts and
//! cross-tile topology, zig-zag sweep stitching, and instance-level
//! recall-at-precision metrics.

pub mod eval;
pub mod geom;
pub mod map;
pub mod synth;

#[cfg(feature = "ml")]
pub mod ml;
