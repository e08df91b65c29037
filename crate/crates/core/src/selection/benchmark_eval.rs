//! Ground-truth scoring of a generated benchmark.

use super::candidates::ground_truth_score;
use super::wins::AdvantageRecord;
use crate::error::{Error, Result};
use crate::gating::BranchScores;
use crate::scene::{KernelConfig, MetricVersion};
use crate::synth::ScenarioSet;

/// One record per scenario and seed; the slow policy plays the VLM branch
/// and the fast policy the ViT branch.
pub fn advantage_records(set: &ScenarioSet, version: MetricVersion, kernel: &KernelConfig) -> Result<Vec<AdvantageRecord>> {
    let mut out = Vec::with_capacity(set.scenarios.len() * set.spec.seeds.len());
    for sc in &set.scenarios {
        for (r, &seed) in set.spec.seeds.iter().enumerate() {
            let s_vlm = ground_truth_score(&sc.slow[r], &sc.scene, version, kernel)?;
            let s_vit = ground_truth_score(&sc.fast[r], &sc.scene, version, kernel)?;
            out.push(AdvantageRecord::new(&sc.id, seed, s_vlm, s_vit));
        }
    }
    Ok(out)
}

/// Per-scenario branch scores for one seed.
pub fn branch_scores(set: &ScenarioSet, seed_index: usize, version: MetricVersion, kernel: &KernelConfig) -> Result<BranchScores> {
    if seed_index >= set.spec.seeds.len() {
        return Err(Error::InvalidArgument(format!("seed index {seed_index} out of range")));
    }
    let mut b = BranchScores::new();
    for sc in &set.scenarios {
        b.insert(
            &sc.id,
            ground_truth_score(&sc.slow[seed_index], &sc.scene, version, kernel)?,
            ground_truth_score(&sc.fast[seed_index], &sc.scene, version, kernel)?,
        );
    }
    Ok(b)
}
