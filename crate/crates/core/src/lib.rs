//! streetgen-core: a desk-scale controllable street-view generation pipeline.
//!
//! The pipeline turns a constrained text prompt into a street-view image
//! through explicit, individually trained stages:
//!
//! 1. [`prompt`] — deterministic grammar parsing of the prompt into a
//!    [`prompt::SceneSpec`] and its three condition texts.
//! 2. [`topology`] — text-to-map diffusion producing a bird's-eye-view
//!    semantic map with a counted number of lane lines.
//! 3. [`layout`] — map-conditioned diffusion over 3D object pose vectors.
//! 4. [`camera`] — pose sampling and pinhole projection of map and layout
//!    into the camera perspective.
//! 5. [`imagegen`] — multi-condition diffusion fusing position tokens,
//!    weather text and two image control branches into the final image.
//!
//! [`world`] procedurally generates the synthetic training corpus,
//! [`eval`] rebuilds the attribute metrics as trained probes, and
//! [`pipeline`] orchestrates everything end to end.

pub mod camera;
pub mod config;
pub mod diffusion;
pub mod eval;
pub mod imagegen;
pub mod layout;
pub mod nn;
pub mod pipeline;
pub mod pngio;
pub mod seeds;
pub mod prompt;
pub mod topology;
pub mod world;

pub use camera::{Box2D, CameraPose, LayoutMap2D, RoadMask2D};

pub use prompt::{Category, ConditionTexts, RoadKind, SceneSpec, Weather};
pub use world::{ObjectLayout, ObjectPose3D, ReferenceImage, SemanticMap};
