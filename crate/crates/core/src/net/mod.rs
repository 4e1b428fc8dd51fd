//! Minimal reverse-mode autodiff and the generator/discriminator networks.

pub mod discriminator;
pub mod generator;
pub mod graph;
pub mod ops;
pub mod params;
pub mod tensor;

pub use discriminator::{discriminator_graph, forward_discriminator, input_gradient, DiscriminatorSpec};
pub use generator::{forward_generator, generator_graph, GeneratorSpec, GeneratorTaps};
pub use graph::{Gradients, Graph, Var};
pub use params::{adam_step, interpolate_weights, AdamConfig, AdamState, BoundParams, ParamSet};
pub use tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const RESIDUAL_SCALE: f64 = 0.2;
