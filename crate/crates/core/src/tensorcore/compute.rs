use serde::{Deserialize, Serialize};

use super::MlpParams;

/// Forward/backward pass counts for one network during one training stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputeRecord {
    pub stage: String,
    pub network: String,
    /// `(in, out)` per layer.
    pub shapes: Vec<(usize, usize)>,
    pub forwards: u64,
    pub backwards: u64,
}

impl ComputeRecord {
    pub fn new(stage: &str, network: &str, params: &MlpParams) -> Self {
        Self {
            stage: stage.into(),
            network: network.into(),
            shapes: params.shapes(),
            forwards: 0,
            backwards: 0,
        }
    }

    /// Multiply-add FLOPs of one forward pass: `2·in·out` per layer.
    pub fn forward_flops(&self) -> u64 {
        self.shapes.iter().map(|&(i, o)| 2 * (i * o) as u64).sum()
    }

    /// Backward passes cost twice a forward pass.
    pub fn total_flops(&self) -> u64 {
        let f = self.forward_flops();
        self.forwards * f + self.backwards * 2 * f
    }
}
