//! Synthetic fixtures and evaluation: procedural chairs, partial-view
//! rendering, scene synthesis and detection metrics.

pub mod chairs;
pub mod fixtures;
mod metrics;
mod render;
mod scene;

pub use chairs::{chair_mesh, write_chair_set, ChairParams};
pub use metrics::{completion_error, evaluate, Assignment, Detection, EvalReport, DEFAULT_D_MATCH};
pub use render::{render_partial, render_with_indices, visible_indices, Camera, RenderParams};
pub use scene::{room_cloud, synthesize_scene, GroundTruth, Placement, Room, SceneSpec, SyntheticScene, TruthObject, BACKGROUND};
