//! Compute accounting from layer shapes and pass counts.

use serde::{Deserialize, Serialize};

use crate::reprlearn::{FeatureLayer, FeaturizerParams};
use crate::tensorcore::ComputeRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsRow {
    pub stage: String,
    pub network: String,
    pub forwards: u64,
    pub backwards: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsLedger {
    pub rows: Vec<FlopsRow>,
    /// Stage totals in order of first appearance.
    pub per_stage: Vec<(String, u64)>,
    pub total: u64,
}

pub fn flops_ledger(records: &[ComputeRecord]) -> FlopsLedger {
    let rows: Vec<FlopsRow> = records
        .iter()
        .map(|r| FlopsRow {
            stage: r.stage.clone(),
            network: r.network.clone(),
            forwards: r.forwards,
            backwards: r.backwards,
            flops: r.total_flops(),
        })
        .collect();
    let mut per_stage: Vec<(String, u64)> = Vec::new();
    for r in &rows {
        match per_stage.iter_mut().find(|(s, _)| *s == r.stage) {
            Some((_, f)) => *f += r.flops,
            None => per_stage.push((r.stage.clone(), r.flops)),
        }
    }
    let total = rows.iter().map(|r| r.flops).sum();
    FlopsLedger { rows, per_stage, total }
}

/// Layers a feature vector passes through.
fn feature_shapes(featurizer: &FeaturizerParams) -> Vec<(usize, usize)> {
    let mut shapes = featurizer.trunk.shapes();
    if featurizer.feature_layer == FeatureLayer::HeadHidden {
        shapes.push(featurizer.head.shapes()[0]);
    }
    shapes
}

/// One-off cost of caching `vectors` state-action features with a frozen featurizer.
pub fn featurization_record(featurizer: &FeaturizerParams, vectors: u64) -> ComputeRecord {
    ComputeRecord {
        stage: "featurize".into(),
        network: "featurizer".into(),
        shapes: feature_shapes(featurizer),
        forwards: vectors,
        backwards: 0,
    }
}

/// What the same critic steps would cost if every Q-head pass also ran (and, for
/// backward passes, differentiated) the featurizer instead of reading cached features.
pub fn end_to_end_critic_records(featurizer: &FeaturizerParams, critic: &[ComputeRecord]) -> Vec<ComputeRecord> {
    let mut out = critic.to_vec();
    for r in critic.iter().filter(|r| r.network == "q_head") {
        out.push(ComputeRecord {
            stage: r.stage.clone(),
            network: "featurizer".into(),
            shapes: feature_shapes(featurizer),
            forwards: r.forwards,
            backwards: r.backwards,
        });
    }
    out
}
