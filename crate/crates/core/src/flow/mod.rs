//! Rectified-flow training: initial flow matching, reflow on ODE-coupled
//! pairs and k-step timestep distillation.

mod loss;
mod pairs;
mod stage;
mod time;
mod train;

pub use loss::{
    cfm_loss, interpolate_batch, interpolate_state, pseudo_huber_c, pseudo_huber_loss, LossKind,
};
pub use pairs::{generate_reflow_pairs, pairs_from_field, PairDataset, PairKind, PairSpec};
pub use stage::{step_grid, Flow, FlowStage, ParentRef, StageTag};
pub use time::{sample_timestep, TimeDist};
pub use train::{distill, train_1rf, train_reflow, TrainConfig, TrainLog};
