//! Sequential CNN graphs: layer specifications, shape inference, batched
//! forward/backward orchestration, structured channel removal, MAC
//! accounting and on-disk formats.

mod arch;
mod graph;
mod io;
mod prune;

pub use arch::{
    Architecture, ChannelId, ConvSpec, Dims, FcSpec, LayerShape, LayerSpec, MacReport, PoolSpec,
};
pub use graph::{Backward, CacheExtra, LayerCache, LayerGrad, LayerParams, Mode, ModelGraph};
pub use io::{deserialize, serialize, ModelDesc};
