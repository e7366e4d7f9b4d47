//! The 1D convolutional autoencoder: layer plan, parameters, forward and
//! backward passes, and encode/decode entry points.

mod config;
mod export;
mod network;
mod params;

pub use config::{conv_param_count, dense_param_count, param_count, LayerSpec, ModelConfig};
pub use export::{export_first_layer_filters, read_filters_csv, write_filters_csv};
pub use network::{
    backward, batch_gradient, decode_from_hidden, decode_with_switches, encode, forward, loss, ForwardTrace, LossParts,
};
pub use params::{build_model, Block, GradDelta, LayerSlot, ParamBundle, ParamLayout};
pub(crate) use params::split_even;
