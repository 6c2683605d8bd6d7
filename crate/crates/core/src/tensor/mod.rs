//! Dense `N x C x H x W` tensors, reverse-mode differentiation, the layer
//! vocabulary of the generator and discriminator, and the Adam optimizer.

mod adam;
mod array;
mod conv;
mod gradcheck;
mod graph;
mod param;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use array::{Shape, Tensor};
pub use conv::ConvGeometry;
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Activation, BatchStats, Gradients, Graph, Mode, Var};
pub use param::{gaussian, Bound, ParamId, ParamStore, Parameter, Role};
