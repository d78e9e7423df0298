//! Physics-based imitation of human-object interaction from hybrid targets:
//! 3D human joint sequences paired with 2D pixel tracks of object vertices.
pub mod alignment;
pub mod geometry;
pub mod harness;
pub mod mesh;
pub mod rewards;
pub mod rl;
pub mod scenario;
pub mod sim;
pub mod skinning;
pub mod targets;
