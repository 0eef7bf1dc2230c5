//! Critic quality against programmatic ground truth: does the sign of the (centered)
//! advantage agree with whether an action lies on the task's shortest path?

use rayon::prelude::*;

use crate::critic::CriticState;
use crate::error::{Error, Result};
use crate::minidevice::{on_optimal_path, Action, Observation, Task};
use crate::reprlearn::{extract_s_features, FeaturizerParams};
use crate::trajstore::Dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledAction {
    pub obs: Observation,
    pub action: Action,
    pub good: bool,
}

/// Every distinct stored candidate of every transition, labeled by optimal-path
/// membership.
pub fn label_candidates(ds: &Dataset, tasks: &[Task]) -> Result<Vec<LabeledAction>> {
    let mut out = Vec::new();
    for t in ds.transitions() {
        let task = tasks
            .iter()
            .find(|x| x.id == t.s.task_id)
            .ok_or(Error::UnknownTask(t.s.task_id))?;
        let mut seen: Vec<Action> = Vec::new();
        for &a in t.candidates.iter().chain(std::iter::once(&t.a)) {
            if seen.contains(&a) {
                continue;
            }
            seen.push(a);
            out.push(LabeledAction {
                obs: t.s.clone(),
                action: a,
                good: on_optimal_path(&t.s, task, a),
            });
        }
    }
    Ok(out)
}

/// Mean-centers the advantages, thresholds at zero and scores agreement with `labels`.
pub fn accuracy_from_advantages(advantages: &[f64], labels: &[bool]) -> Result<f64> {
    if advantages.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} advantages for {} labels",
            advantages.len(),
            labels.len()
        )));
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::Invalid("labeled set needs both good and bad actions".into()));
    }
    let mean = advantages.iter().sum::<f64>() / advantages.len() as f64;
    let hits = advantages
        .iter()
        .zip(labels)
        .filter(|(&a, &good)| (a - mean > 0.0) == good)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn advantage_accuracy(critic: &CriticState, featurizer: &FeaturizerParams, labeled: &[LabeledAction]) -> Result<f64> {
    let advantages = labeled
        .par_iter()
        .map(|l| {
            let f_s = extract_s_features(&l.obs).values;
            let f_sa = featurizer.sa_features_from(&f_s, &l.action)?;
            Ok(critic.q(&f_sa.values)? - critic.v(&f_s)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let labels: Vec<bool> = labeled.iter().map(|l| l.good).collect();
    accuracy_from_advantages(&advantages, &labels)
}
