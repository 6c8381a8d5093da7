//! Small dense networks, a reverse-mode tape and Adam.

pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;

pub use layers::{Conv2d, ConvSpec, Linear, Mlp, NetSpec};
pub use params::{AdamConfig, Group, Param, ParamId, ParamStore};
pub use tape::{Activation, ConvShape, Mat, NodeGrads, Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("dimension mismatch in {layer}: expected {expected}, found {found}")]
    Dimension { layer: String, expected: usize, found: usize },
    #[error("non-finite gradient in parameter {param} at index {index}")]
    NonFiniteGradient { param: String, index: usize },
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error("invalid network spec: {0}")]
    Spec(String),
}
