//! Evaluation and verification: greedy success rates, the exact tabular oracle,
//! advantage accuracy against programmatic labels, compute accounting, ablation runners
//! and report files.

mod ablation;
mod advantage;
mod eval;
mod flops;
mod report;
mod tabular;

pub use ablation::{directional_checks, run_ablation, Ablation, AblationRunner, Check};
pub use advantage::{accuracy_from_advantages, advantage_accuracy, label_candidates, LabeledAction};
pub use eval::{episode_seed, evaluate_policy, greedy_episode, SuccessTable, TaskSuccess};
pub use flops::{end_to_end_critic_records, featurization_record, flops_ledger, FlopsLedger, FlopsRow};
pub use report::{emit_report, parse_report, pooled_std, Curve, CurvePoint, EvalReport, MethodResult, Stat};
pub use tabular::{
    bellman_residual, branching_fixture, critic_q_table, five_state_fixture, max_q_error, sample_episodes,
    sample_transitions, tabular_critic_config, tabular_q_oracle, value_variance, TabularMDP, ValueVariance,
};
