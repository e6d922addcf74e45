//! Bit-width search: a bidirectional recurrent policy over layer embeddings,
//! Monte Carlo per-step returns and REINFORCE updates.

mod cell;
mod embedding;
mod policy;
mod reinforce;
mod reward;
mod sequence;

pub use cell::CellKind;
pub use embedding::{embed_layer, embed_model, searched_layers, LayerEmbedding, EMBED_DIM};
pub use policy::{PolicyConfig, PolicyModel, SequencePolicy, TabularPolicy};
pub use reinforce::{
    collect_rollouts, complete, greedy_sequence, mc_return, policy_gradient_step, sample_sequence,
    score_function_gradient, search_log_csv, train_controller, ControllerConfig, ControllerOutcome, McMode, Rollout,
    SampledSequence, SearchRecord, MAX_ENUMERATED_STEPS, SEARCH_LOG_HEADER,
};
pub use reward::{
    evaluate_reward, full_plan, plan_ratio, ModelReward, RewardConfig, RewardSource, RolloutRecord,
};
pub use sequence::{action_bits, bits_action, sample_categorical, softmax, BitWidthSequence, NUM_ACTIONS};
