//! Toy three-branch attention block.
//!
//! A frozen global self-attention branch plus two parallel branches whose
//! outputs pass through zero-initialized linear layers:
//!
//! - exploration: attention of video tokens over `[x; c]`, where `c` encodes
//!   the camera route's Plücker field
//! - sphere: self-attention with a sphere mask bias
//!
//! The backward pass is written by hand and checked against central finite
//! differences by [`grad_check`].

mod attention;
mod block;
mod matrix;
mod weights;

pub use attention::{attention, attention_backward, AttentionCache};
pub use block::{
    encode_condition, exploration_branch, forward_block, global_branch, grad_check, loss_and_grads,
    pool_condition, sphere_attention_weights, sphere_branch, GradCheckOptions, GradCheckReport,
    Stencil,
};
pub use matrix::Matrix;
pub use weights::{read_pwxb, write_pwxb, BlockConfig, BlockWeights, ParamId, PWXB_MAGIC, PWXB_VERSION};
