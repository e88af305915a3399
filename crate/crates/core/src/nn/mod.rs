//! A small reverse-mode autodiff engine and the layers built on it.
//!
//! All numerics are f64 and strictly deterministic: ops are sequential,
//! matrix products go through ndarray's single-threaded kernels, and
//! parallelism only ever happens across independent per-sample graphs whose
//! gradients are reduced in a fixed order.

pub mod graph;
pub mod layers;
pub mod optim;
pub mod store;
pub mod unet;

pub use graph::{AttnTap, Graph, NodeId};
pub use layers::{Conv2d, CrossAttention, GroupNorm, LayerNorm, Linear, SelfAttention};
pub use optim::AdamW;
pub use store::{Init, ParamStore};
pub use unet::{UNet, UNetConfig};
