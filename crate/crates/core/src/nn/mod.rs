//! Minimal deterministic network engine: sequential dense/conv/ReLU/pool
//! layers, softmax cross-entropy, and SGD with momentum.

mod layer;
mod loss;
mod network;
mod optim;
mod serialize;

pub use layer::{LayerKind, LayerSpec};
pub use loss::{argmax_rows, cross_entropy};
pub use network::{build_network, ActivationTrace, Gradients, Layer, LayerParams, Network, NetworkSpec};
pub use optim::{lr_schedule, sgd_step, OptimizerState, SgdConfig};
pub use serialize::{decode_network, encode_network, load_network, save_network, NETWORK_MAGIC};
