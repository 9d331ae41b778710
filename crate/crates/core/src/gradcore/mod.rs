//! Dense tensors, tape-based reverse-mode differentiation, ADAM, and a
//! finite-difference gradient oracle.

mod adam;
mod checkpoint;
mod gradcheck;
mod params;
mod rng;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_into, save_checkpoint,
    CHECKPOINT_MAGIC,
};
pub use gradcheck::{finite_difference_gradcheck, relative_error, screened_gradcheck, Coverage, GradcheckReport};
pub use params::{Gradients, ParamId, ParameterStore};
pub use rng::{Rng, SeedStream};
pub use tape::{Graph, Var, NORM_EPS};
pub use tensor::Tensor;
