//! Offline dataset model: transitions with pre-sampled candidate actions, trajectories,
//! collection, persistence and seeded batch sampling.

mod io;

pub use io::{from_bytes, load, load_checked, save, to_bytes, DATASET_FORMAT, DATASET_VERSION};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minidevice::{self, Action, ActionPolicy, EnvConfig, Observation, Task};
use crate::util::substream;

/// Optional frozen-feature slots carried alongside a transition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureCache {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sa: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_next: Option<Vec<f64>>,
    /// `f(s, a_i)` per candidate, aligned with `Transition::candidates`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Observation,
    pub a: Action,
    pub r: u8,
    pub s_next: Observation,
    pub done: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureCache>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: u32,
    pub seed: u64,
    pub transitions: Vec<Transition>,
    pub success: bool,
}

impl Trajectory {
    /// Discounted return-to-go at every step.
    pub fn returns_to_go(&self, gamma: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.transitions.len()];
        let mut acc = 0.0;
        for (i, t) in self.transitions.iter().enumerate().rev() {
            acc = t.r as f64 + gamma * acc;
            out[i] = acc;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub env: EnvConfig,
    pub env_hash: String,
    pub policy_id: String,
    /// Candidates stored per transition (0 before pre-sampling).
    pub k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn n_transitions(&self) -> usize {
        self.trajectories.iter().map(|t| t.transitions.len()).sum()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.trajectories.iter().flat_map(|t| t.transitions.iter())
    }

    pub fn success_rate(&self) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        self.trajectories.iter().filter(|t| t.success).count() as f64 / self.trajectories.len() as f64
    }

    /// Structural checks shared by construction and loading.
    pub fn validate(&self) -> Result<()> {
        let fail = |d: String| Err(Error::format(crate::FormatErrorKind::Validation, d));
        for (i, traj) in self.trajectories.iter().enumerate() {
            let total: u32 = traj.transitions.iter().map(|t| t.r as u32).sum();
            if total > 1 {
                return fail(format!("trajectory {i} collects reward {total}"));
            }
            if traj.success != (total == 1) {
                return fail(format!("trajectory {i} success flag disagrees with its rewards"));
            }
            for (j, t) in traj.transitions.iter().enumerate() {
                let last = j + 1 == traj.transitions.len();
                if t.done != last {
                    return fail(format!("trajectory {i} step {j}: done flag out of place"));
                }
                if self.meta.k > 0 {
                    if t.candidates.len() != self.meta.k {
                        return fail(format!(
                            "trajectory {i} step {j}: {} candidates but K = {}",
                            t.candidates.len(),
                            self.meta.k
                        ));
                    }
                    if !t.candidates.contains(&t.a) {
                        return fail(format!("trajectory {i} step {j}: executed action missing from candidates"));
                    }
                } else if !t.candidates.is_empty() {
                    return fail(format!("trajectory {i} step {j}: candidates present but K = 0"));
                }
                if let Some(f) = &t.features {
                    if !f.candidates.is_empty() && f.candidates.len() != t.candidates.len() {
                        return fail(format!("trajectory {i} step {j}: candidate feature count mismatch"));
                    }
                }
            }
        }
        self.validate_feature_dims()
    }

    fn validate_feature_dims(&self) -> Result<()> {
        let mut sa_dim = None;
        let mut s_dim = None;
        let check = |slot: &mut Option<usize>, v: &[f64], what: &str| -> Result<()> {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::format(
                    crate::FormatErrorKind::Validation,
                    format!("non-finite {what} feature"),
                ));
            }
            match *slot {
                None => *slot = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(Error::format(
                        crate::FormatErrorKind::Validation,
                        format!("{what} feature dimension drifts from {d} to {}", v.len()),
                    ))
                }
                _ => {}
            }
            Ok(())
        };
        for t in self.transitions() {
            if let Some(f) = &t.features {
                if let Some(v) = &f.sa {
                    check(&mut sa_dim, v, "state-action")?;
                }
                for v in &f.candidates {
                    check(&mut sa_dim, v, "state-action")?;
                }
                for v in f.s.iter().chain(f.s_next.iter()) {
                    check(&mut s_dim, v, "state")?;
                }
            }
        }
        Ok(())
    }
}

fn lookup<'a>(tasks: &'a [Task], id: u32) -> Result<&'a Task> {
    tasks.iter().find(|t| t.id == id).ok_or(Error::UnknownTask(id))
}

/// Rolls out `n_traj` episodes on tasks drawn uniformly from `tasks`. Episode `i` uses its
/// own RNG substream, so the result does not depend on scheduling.
pub fn collect_dataset(
    env: &EnvConfig,
    tasks: &[Task],
    policy: &dyn ActionPolicy,
    n_traj: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_traj == 0 {
        return Err(Error::Invalid("n_traj must be positive".into()));
    }
    if tasks.is_empty() {
        return Err(Error::Invalid("empty task pool".into()));
    }
    env.validate()?;
    let trajectories = (0..n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, i));
            let task = &tasks[rng.gen_range(0..tasks.len())];
            let env_seed: u64 = rng.gen();
            rollout(env, task, policy, env_seed, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset {
        meta: DatasetMeta {
            env: *env,
            env_hash: env.hash(),
            policy_id: policy.id(),
            k: 0,
            seed,
        },
        trajectories,
    };
    ds.validate()?;
    Ok(ds)
}

/// One episode from reset to success or horizon.
pub fn rollout(
    env: &EnvConfig,
    task: &Task,
    policy: &dyn ActionPolicy,
    env_seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let (mut state, mut obs) = minidevice::reset(task, env, env_seed)?;
    let mut transitions = Vec::new();
    loop {
        let a = policy.sample(&obs, task, rng);
        let out = minidevice::step(&mut state, a)?;
        let done = out.done;
        transitions.push(Transition {
            s: obs,
            a,
            r: out.reward,
            s_next: out.obs.clone(),
            done,
            candidates: Vec::new(),
            features: None,
        });
        obs = out.obs;
        if done {
            break;
        }
    }
    let success = minidevice::evaluate_success(&obs, task) == 1;
    Ok(Trajectory {
        task_id: task.id,
        seed: env_seed,
        transitions,
        success,
    })
}

/// Fills every transition with `k` candidate actions sampled from `policy`, with the
/// executed action written over one uniformly chosen slot. Feature caches are dropped.
pub fn presample_candidates(
    dataset: &Dataset,
    tasks: &[Task],
    policy: &dyn ActionPolicy,
    k: usize,
    seed: u64,
) -> Result<Dataset> {
    if k == 0 {
        return Err(Error::Invalid("K must be at least 1".into()));
    }
    let offsets: Vec<usize> = dataset
        .trajectories
        .iter()
        .scan(0, |acc, t| {
            let o = *acc;
            *acc += t.transitions.len();
            Some(o)
        })
        .collect();
    let trajectories = dataset
        .trajectories
        .par_iter()
        .zip(offsets)
        .map(|(traj, offset)| {
            let task = lookup(tasks, traj.task_id)?;
            let transitions = traj
                .transitions
                .iter()
                .enumerate()
                .map(|(j, t)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, (offset + j) as u64));
                    let mut candidates: Vec<Action> =
                        (0..k).map(|_| policy.sample(&t.s, task, &mut rng)).collect();
                    let slot = rng.gen_range(0..k);
                    candidates[slot] = t.a;
                    Transition {
                        candidates,
                        features: None,
                        ..t.clone()
                    }
                })
                .collect();
            Ok(Trajectory {
                transitions,
                ..traj.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset {
        meta: DatasetMeta {
            k,
            ..dataset.meta.clone()
        },
        trajectories,
    };
    ds.validate()?;
    Ok(ds)
}

/// Uniform sample of `batch_size` distinct indices out of `n`.
pub fn sample_indices(n: usize, batch_size: usize, seed: u64) -> Result<Vec<usize>> {
    if batch_size > n {
        return Err(Error::Invalid(format!("batch of {batch_size} from {n} transitions")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, n, batch_size).into_vec())
}

/// Uniform without-replacement batch of transitions.
pub fn sample_batch(dataset: &Dataset, batch_size: usize, seed: u64) -> Result<Vec<&Transition>> {
    let all: Vec<&Transition> = dataset.transitions().collect();
    let idx = sample_indices(all.len(), batch_size, seed)?;
    Ok(idx.into_iter().map(|i| all[i]).collect())
}
