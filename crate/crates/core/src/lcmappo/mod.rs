//! Constrained multi-agent PPO: rollouts, shaped returns, counterfactual
//! advantages, clipped updates with critic regression, and the per-resource
//! multipliers.

mod coma;
mod dual;
mod ppo;
mod returns;
mod rollout;
mod train;

pub use coma::{coma_advantage, counterfactual_advantage, option_values, shaped_value};
pub use dual::{DualConfig, DualControl, DualState};
pub use ppo::{actor_loss_grad, critic_loss_grad, ppo_update, Optimizers, UpdateConfig, UpdateStats};
pub use returns::{head_returns, shaped_returns, shaped_reward};
pub use rollout::{collect_rollouts, Buffer, EpisodeSummary, RolloutSpec, Transition};
pub use train::{
    checkpoint_of, effective_prices, load_checkpoint, normalize_per_agent, save_checkpoint, train, write_metrics_csv,
    Enforcement, IterMetrics, TrainConfig, TrainEnv, TrainOutcome, Variant,
};
