//! Dense tensors, a reverse-mode gradient tape, and the layer primitives the
//! policies are built from.

mod layers;
mod optim;
mod tape;
mod tensor;

pub use layers::{
    argmax, gcn_layer, gumbel_noise, gumbel_softmax, gumbel_softmax_with_noise, huber_loss,
    mlp_forward, orthogonal, softmax, Activation, Bound, GruCell, GumbelSample, LayerParams,
    ParamId, ParamSet,
};
pub use optim::{adam_update, clip_global_norm, global_norm, AdamState, StepInfo};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::is_permutation;
