//! Small dense-matrix autodiff engine and the layers built on it.

mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

pub use layers::{
    cross_attention, dense, graphsage_layer, gru_step, AttentionParams, DenseParams, GruParams,
    SageLayerParams,
};
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use params::{Bound, Checkpoint, NamedTensor, ParamId, ParamStore, CHECKPOINT_VERSION};
pub use tape::{Tape, Var};
pub use tensor::Tensor;


