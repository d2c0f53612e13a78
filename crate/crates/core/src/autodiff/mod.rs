//! Dense tensors, a define-by-run graph with reverse-mode gradients, a
//! finite-difference checker and Adam.
//!
//! All arithmetic is done in `f64`.

mod adam;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{finite_difference_check, finite_difference_check_sampled, GradCheck};
pub use graph::{
    Gradients, Graph, Var, LAYER_NORM_EPS, LAYER_NORM_FLOPS_PER_ELEMENT, SOFTMAX_FLOPS_PER_ELEMENT,
};
pub use tensor::Tensor;
