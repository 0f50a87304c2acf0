//! Layer descriptions, the reference networks, parameter storage and the
//! on-disk model container.

mod build;
mod forward;
mod io;
mod spec;

pub use build::{
    build_custom_rop_net, build_mobilenet_like, custom_rop_spec, init_parameters,
    mobilenet_like_spec, scaled_channels, CUSTOM_BASE_CHANNELS, FEATURE_UNITS,
    MOBILENET_BLOCK_CHANNELS, SUPPORTED_INPUT_SIZES, SUPPORTED_WIDTHS,
};
pub use forward::{eval_layer, forward};
pub(crate) use forward::check_batch;
pub use io::{decode_model, encode_model, load_model, save_model, FORMAT_VERSION, MAGIC};
pub use spec::{
    count_parameters, is_running_stat, param_name, LayerSpec, ModelSpec, Param, ParamCount,
    Parameters,
};
