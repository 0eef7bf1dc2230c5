//! The single run configuration. Every scalar used by a stage is sourced from here; the
//! resolved config and its hash are written next to every artifact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::critic::CriticConfig;
use crate::error::{Error, Result};
use crate::minidevice::{BehaviorConfig, EnvConfig, Split, Task};
use crate::policy::{ActorConfig, ExtractionConfig};
use crate::reprlearn::ReprConfig;
use crate::util::short_hash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorLoss {
    #[default]
    Bon,
    Awr,
    Reinforce,
}

impl std::str::FromStr for ActorLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bon" => Ok(Self::Bon),
            "awr" => Ok(Self::Awr),
            "reinforce" => Ok(Self::Reinforce),
            other => Err(Error::Config(format!("unknown actor loss `{other}` (bon, awr, reinforce)"))),
        }
    }
}

impl std::fmt::Display for ActorLoss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Bon => "bon",
            Self::Awr => "awr",
            Self::Reinforce => "reinforce",
        })
    }
}

/// Which tasks to collect on or evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSplit {
    #[default]
    All,
    Train,
    Test,
}

impl TaskSplit {
    pub fn select(self, pool: &[Task]) -> Vec<Task> {
        pool.iter()
            .filter(|t| match self {
                TaskSplit::All => true,
                TaskSplit::Train => t.split == Split::Train,
                TaskSplit::Test => t.split == Split::Test,
            })
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_traj: usize,
    /// Candidate actions stored per transition.
    pub k: usize,
    pub split: TaskSplit,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_traj: 256,
            k: 64,
            split: TaskSplit::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes_per_task: usize,
    pub split: TaskSplit,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes_per_task: 4,
            split: TaskSplit::All,
        }
    }
}

/// Settings swept or fixed by the ablation runners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// Best-of-N sample counts for the N sweep.
    pub n_values: Vec<usize>,
    /// Training-set sizes (trajectories) for the data-scaling sweep.
    pub data_sizes: Vec<usize>,
    /// Episodes per dataset in the Monte-Carlo vs TD variance study.
    pub variance_episodes: usize,
    /// Independently drawn datasets in the variance study.
    pub variance_reseeds: usize,
    /// Transitions drawn for the tabular oracle comparison.
    pub tabular_transitions: usize,
    /// Critic used on the one-hot tabular fixtures; hidden widths and `m` are overridden.
    pub tabular_critic: CriticConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            n_values: vec![1, 4, 16],
            data_sizes: vec![64, 128, 256],
            variance_episodes: 32,
            variance_reseeds: 20,
            tabular_transitions: 50_000,
            tabular_critic: CriticConfig {
                gamma: 0.9,
                tau: 0.05,
                lr: 1e-3,
                batch_size: 2000,
                iterations: 300,
                steps_per_iteration: 20,
                grad_clip: 1e3,
                ..CriticConfig::default()
            },
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return Err(Error::Config("ablation.n_values must be non-empty and positive".into()));
        }
        if self.data_sizes.is_empty() || self.data_sizes.contains(&0) {
            return Err(Error::Config("ablation.data_sizes must be non-empty and positive".into()));
        }
        if self.variance_episodes == 0 || self.variance_reseeds < 2 || self.tabular_transitions == 0 {
            return Err(Error::Config(
                "ablation needs variance_episodes > 0, variance_reseeds ≥ 2 and tabular_transitions > 0".into(),
            ));
        }
        self.tabular_critic.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Seeds used by ablations and multi-seed reports.
    pub seeds: Vec<u64>,
    pub actor_loss: ActorLoss,
    pub env: EnvConfig,
    pub behavior: BehaviorConfig,
    pub data: DataConfig,
    pub repr: ReprConfig,
    pub critic: CriticConfig,
    pub actor: ActorConfig,
    pub extraction: ExtractionConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: vec![0, 1, 2],
            actor_loss: ActorLoss::Bon,
            env: EnvConfig::default(),
            behavior: BehaviorConfig::default(),
            data: DataConfig::default(),
            repr: ReprConfig::default(),
            critic: CriticConfig::default(),
            actor: ActorConfig::default(),
            extraction: ExtractionConfig::default(),
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.behavior.validate()?;
        self.repr.validate()?;
        self.critic.validate()?;
        self.actor.validate()?;
        self.extraction.validate()?;
        self.ablation.validate()?;
        if self.data.n_traj == 0 || self.data.k == 0 {
            return Err(Error::Config("data.n_traj and data.k must be positive".into()));
        }
        if self.extraction.n > self.data.k {
            return Err(Error::Config(format!(
                "extraction.n = {} exceeds data.k = {}",
                self.extraction.n, self.data.k
            )));
        }
        if let Some(&n) = self.ablation.n_values.iter().find(|&&n| n > self.data.k) {
            return Err(Error::Config(format!("ablation N = {n} exceeds data.k = {}", self.data.k)));
        }
        if self.critic.m > self.data.k {
            return Err(Error::Config(format!("critic.m = {} exceeds data.k = {}", self.critic.m, self.data.k)));
        }
        if self.eval.episodes_per_task == 0 {
            return Err(Error::Config("eval.episodes_per_task must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        Ok(())
    }

    /// The fully resolved config as TOML.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        short_hash(self.echo().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        let back = TrainConfig::from_toml(&cfg.echo()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn echo_lists_every_module_scalar() {
        let echo = TrainConfig::default().echo();
        for key in [
            "gamma", "tau", "epsilon_frac", "n =", "k =", "horizon", "m =", "batch_size", "lr",
            "grad_clip", "epochs", "iterations", "p_popup", "seeds", "feature_dim", "awr_beta",
            "awr_cap", "threshold", "temperature", "noise", "ad_click", "n_values", "data_sizes",
            "variance_reseeds", "tabular_transitions",
        ] {
            assert!(echo.contains(key), "missing `{key}` in\n{echo}");
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = TrainConfig::from_toml("[critic]\ngama = 0.9\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(TrainConfig::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn partial_files_fill_defaults_and_ranges_checked() {
        let cfg = TrainConfig::from_toml("seed = 5\n[extraction]\nn = 4\n").unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.extraction.n, 4);
        assert_eq!(cfg.extraction.awr_cap, 20.0);
        assert!(TrainConfig::from_toml("[env]\np_popup = 1.5\n").is_err());
        let mut big_n = TrainConfig::default();
        big_n.extraction.n = 65;
        assert!(big_n.validate().is_err());
        assert_ne!(TrainConfig { seed: 1, ..TrainConfig::default() }.hash(), TrainConfig::default().hash());
    }
}
