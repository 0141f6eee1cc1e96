//! Forward policy, flow and backward estimators, and their training
//! objective.

mod gaussian;
mod model;
mod objective;

pub use gaussian::{action_to_slate, forward_log_density, log_density_grad, sample_action, GaussianParams};
pub use model::{
    checkpoint_text, load_checkpoint, network_of, train_step, CheckpointHeader, GfnModel, Optimizers,
    BACKWARD_PREFIX, ENCODER_PREFIX, FLOW_PREFIX, FORWARD_PREFIX,
};
pub use objective::{
    decomposed_step_residual, immediate_flow, ln_reward_integrate, log_add_exp, reward_integrate,
    smoothed_log_forward, step_residual, terminal_residual, terminal_target, Hyper, Transition,
};
