//! Dense tensors with reverse-mode differentiation.

mod gradcheck;
mod tape;

pub use gradcheck::{central_difference, finite_diff_check, GradCheck, EPS_FLOOR, KINK_RETRIES};
pub use tape::{softmax_rows_value, Tape, Var, COSINE_SMOOTHING, LAYER_NORM_EPS};
