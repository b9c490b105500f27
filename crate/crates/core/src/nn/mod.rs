//! Small neural-network engine: batched real tensors, reverse-mode
//! differentiation, dense and LSTM layers, batch normalization and Adam.

pub mod checkpoint;
mod gradcheck;
mod graph;
mod layers;
mod store;
mod tensor;

pub use gradcheck::{gradient_check, TensorCheck, REL_FLOOR};
pub use graph::{BnUpdate, Graph, Mode, Var};
pub use layers::{Activation, BatchNorm, Dense, DenseStack, Lstm, LstmState, BN_EPS, BN_MOMENTUM};
pub use store::{Adam, EntryKind, Gradients, ParamId, ParameterStore};
pub use tensor::Tensor;
