//! Deterministic dense-network kernel: tensors, layers, pooling, losses,
//! parameter storage, AdamW and gradient checking.

mod conv;
mod gradcheck;
mod ops;
mod optim;
mod params;
mod tensor;

pub use conv::{conv1d_backward, conv1d_forward, unfold, Conv1dGeometry};
pub use gradcheck::{finite_diff_check, finite_diff_report, relative_error, GradCheckReport};
pub use ops::{
    cross_entropy, gelu, gelu_backward, gelu_derivative, gelu_scalar, linear_backward,
    linear_forward, linear_rows, log_add, log_softmax, log_softmax_slice, logsumexp,
    maxpool_backward, maxpool_time, softmax, softmax_backward, softmax_slice, LinearGrads,
};
pub(crate) use ops::affine_rows_backward;
pub use optim::{clip_grad_norm, AdamW};
pub use params::{init_params, ParamEntry, ParamKind, ParamSpec, ParamStore};
pub use tensor::Tensor;
