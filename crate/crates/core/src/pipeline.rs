//! Stage wiring: collect → fine-tune featurizer → critic → behavior clone → extraction →
//! evaluation. The in-memory functions here are shared by the CLI and the ablations.

use serde::{Deserialize, Serialize};

use crate::config::{ActorLoss, TrainConfig};
use crate::critic::{self, CriticData, CriticRun};
use crate::error::Result;
use crate::evalbench::{evaluate_policy, SuccessTable};
use crate::minidevice::{default_task_pool, FlawedExpert, Task};
use crate::policy::{
    self, awr_train, bon_train, device_action_space, reinforce_train, ActorData, CandidateValues,
    LearnedPolicy, PolicyRun,
};
use crate::reprlearn::{effect_samples, train_effect_classifier, EffectReport, FeaturizerParams};
use crate::trajstore::{collect_dataset, presample_candidates, Dataset};
use crate::util::substream;

/// Distinct sub-seeds per stage so that stages can be re-run independently.
pub mod stage_seed {
    pub const DATA: u64 = 0;
    pub const CANDIDATES: u64 = 1;
    pub const FEATURIZER: u64 = 2;
    pub const CRITIC: u64 = 3;
    pub const BC: u64 = 4;
    pub const ACTOR: u64 = 5;
    pub const EVAL: u64 = 6;
}

pub fn seed_for(seed: u64, stage: u64) -> u64 {
    substream(seed, stage)
}

pub fn task_pool(cfg: &TrainConfig) -> Vec<Task> {
    default_task_pool(cfg.env.horizon)
}

pub(crate) fn staged<T>(stage: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(stage))
}

/// Rolls out the behavior policy and pre-samples `K` candidates per state.
pub fn collect(cfg: &TrainConfig, n_traj: usize, seed: u64) -> Result<Dataset> {
    let pool = task_pool(cfg);
    let tasks = cfg.data.split.select(&pool);
    let behavior = FlawedExpert::new(cfg.behavior);
    let ds = collect_dataset(&cfg.env, &tasks, &behavior, n_traj, seed_for(seed, stage_seed::DATA))?;
    presample_candidates(&ds, &pool, &behavior, cfg.data.k, seed_for(seed, stage_seed::CANDIDATES))
}

pub fn fit_featurizer(cfg: &TrainConfig, ds: &Dataset, seed: u64) -> Result<(FeaturizerParams, EffectReport)> {
    let samples = effect_samples(ds, cfg.env.epsilon())?;
    train_effect_classifier(&samples, &cfg.repr, seed_for(seed, stage_seed::FEATURIZER))
}

pub fn critic_data(cfg: &TrainConfig, ds: &Dataset, featurizer: &FeaturizerParams) -> Result<CriticData> {
    CriticData::from_dataset(ds, Some(featurizer), cfg.critic.gamma)
}

pub fn fit_critic(cfg: &TrainConfig, data: &CriticData, seed: u64) -> Result<CriticRun> {
    critic::train_critic(data, &cfg.critic, seed_for(seed, stage_seed::CRITIC))
}

pub fn fit_bc(cfg: &TrainConfig, data: &ActorData, seed: u64) -> Result<PolicyRun> {
    policy::behavior_clone(data, device_action_space(), &cfg.actor, seed_for(seed, stage_seed::BC))
}

pub fn extract(
    cfg: &TrainConfig,
    loss: ActorLoss,
    bc: &PolicyRun,
    data: &ActorData,
    values: &CandidateValues,
    seed: u64,
) -> Result<PolicyRun> {
    let s = seed_for(seed, stage_seed::ACTOR);
    let reference = Some(&bc.policy);
    match loss {
        ActorLoss::Bon => bon_train(&bc.policy, data, values, &cfg.extraction, s, reference),
        ActorLoss::Awr => awr_train(&bc.policy, data, values, &cfg.extraction, s, reference),
        ActorLoss::Reinforce => reinforce_train(&bc.policy, data, values, &cfg.extraction, s, reference),
    }
}

pub fn evaluate(cfg: &TrainConfig, policy: &LearnedPolicy, seed: u64) -> Result<SuccessTable> {
    let tasks = cfg.eval.split.select(&task_pool(cfg));
    evaluate_policy(
        &cfg.env,
        policy,
        &tasks,
        cfg.eval.episodes_per_task,
        &[seed_for(seed, stage_seed::EVAL)],
    )
}

/// Everything one seed of the pipeline produces.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub featurizer: FeaturizerParams,
    pub repr_report: EffectReport,
    pub critic: CriticRun,
    pub bc: PolicyRun,
    pub actor: PolicyRun,
    pub bc_success: SuccessTable,
    pub actor_success: SuccessTable,
}

/// The whole pipeline in memory for one seed, optionally replacing the fine-tuned
/// featurizer.
pub fn run(cfg: &TrainConfig, ds: &Dataset, seed: u64, featurizer: Option<FeaturizerParams>) -> Result<Outcome> {
    let (featurizer, repr_report) = match featurizer {
        Some(f) => (f, EffectReport::skipped()),
        None => staged("featurizer", fit_featurizer(cfg, ds, seed))?,
    };
    let cdata = staged("critic", critic_data(cfg, ds, &featurizer))?;
    let critic = staged("critic", fit_critic(cfg, &cdata, seed))?;
    let adata = ActorData::from_dataset(ds);
    let bc = staged("behavior_clone", fit_bc(cfg, &adata, seed))?;
    let values = staged("actor", CandidateValues::compute(&critic.state, &cdata))?;
    let actor = staged("actor", extract(cfg, cfg.actor_loss, &bc, &adata, &values, seed))?;
    let bc_success = staged(
        "eval",
        evaluate(cfg, &LearnedPolicy::new(bc.policy.clone(), "behavior_clone"), seed),
    )?;
    let actor_success = staged(
        "eval",
        evaluate(cfg, &LearnedPolicy::new(actor.policy.clone(), &cfg.actor_loss.to_string()), seed),
    )?;
    Ok(Outcome {
        featurizer,
        repr_report,
        critic,
        bc,
        actor,
        bc_success,
        actor_success,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: String,
    pub hash: String,
}
