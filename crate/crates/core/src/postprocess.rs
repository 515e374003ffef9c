//! Post-processing of fused label maps.
//!
//! Small, low-confidence enhancing-tumor components are usually artifacts
//! of fusion, and penalized heavily by lesion-wise scoring. The refinement
//! here relabels them to the surrounding tumor tissue in two stages: first
//! per component, then over whatever enhancing tumor remains.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::{connected_components, Connectivity};
use crate::volume::{region_mask, LabelSchema, LabelVolume, ProbabilityVolume};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EtRefineParams {
    /// Components smaller than this are candidates for relabeling.
    pub min_component_voxels: usize,
    /// If the surviving enhancing tumor is smaller than this in total, it
    /// is relabeled wholesale.
    pub min_total_voxels: usize,
    /// Mean-probability cutoff that rescues a candidate; without a
    /// probability map the size rules alone decide.
    pub probability_threshold: f64,
    /// Label name the removed voxels are reassigned to.
    pub relabel_to: String,
    pub connectivity: Connectivity,
}

impl EtRefineParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_component_voxels == 0 || self.min_total_voxels == 0 {
            return Err(Error::InvalidParameter(
                "refinement size thresholds must be at least 1".into(),
            ));
        }
        if !(self.probability_threshold > 0.0 && self.probability_threshold <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "probability threshold {} outside (0, 1]",
                self.probability_threshold
            )));
        }
        Ok(())
    }
}

impl Default for EtRefineParams {
    fn default() -> Self {
        EtRefineParams {
            min_component_voxels: 16,
            min_total_voxels: 73,
            probability_threshold: 0.9,
            relabel_to: "NCR".to_string(),
            connectivity: Connectivity::TwentySix,
        }
    }
}

/// What happened to one enhancing-tumor component in stage one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentDecision {
    pub id: u32,
    pub voxels: usize,
    /// Mean probability over the component; absent in size-only runs.
    pub mean_probability: Option<f64>,
    pub relabeled: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefineReport {
    /// True when no probability map was supplied and only the size rules
    /// applied.
    pub size_only: bool,
    pub et_voxels_before: usize,
    pub et_voxels_after: usize,
    pub components: Vec<ComponentDecision>,
    pub stage1_relabeled_voxels: usize,
    /// Mean probability over the voxels surviving stage one; absent in
    /// size-only runs and when nothing survived.
    pub stage2_mean_probability: Option<f64>,
    pub stage2_triggered: bool,
    pub stage2_relabeled_voxels: usize,
}

/// Relabel unconvincing enhancing-tumor voxels to `params.relabel_to`.
///
/// Stage one drops each component smaller than `min_component_voxels`
/// unless its mean probability reaches `probability_threshold`. Stage two
/// applies the same probability test to everything that survived and drops
/// it all when the total stays under `min_total_voxels`. The refinement is
/// idempotent.
pub fn refine_enhancing_tumor(
    seg: &LabelVolume,
    probability: Option<&ProbabilityVolume>,
    schema: &LabelSchema,
    params: &EtRefineParams,
) -> Result<(LabelVolume, RefineReport)> {
    params.validate()?;
    let target = schema.label_value(&params.relabel_to)?;
    if let Some(p) = probability {
        seg.geometry
            .ensure_compatible(&p.geometry, "refine_enhancing_tumor")?;
    }
    let et = region_mask(seg, schema, "ET")?;
    let labeling = connected_components(&et, params.connectivity);
    let et_voxels_before = et.count_true();

    let mean_probability = |member: &dyn Fn(usize) -> bool| -> Option<f64> {
        let p = probability?;
        let mut sum = 0.0;
        let mut count = 0usize;
        for (i, &v) in p.voxels.iter().enumerate() {
            if member(i) {
                sum += v;
                count += 1;
            }
        }
        (count > 0).then(|| sum / count as f64)
    };

    let mut out = seg.voxels.clone();
    let mut components = Vec::new();
    let mut stage1_relabeled_voxels = 0usize;
    let mut removed = vec![false; labeling.count() + 1];
    for id in 1..=labeling.count() as u32 {
        let size = labeling.size(id);
        let mean = mean_probability(&|i| labeling.labels[i] == id);
        let confident = mean.is_some_and(|m| m >= params.probability_threshold);
        let relabel = size < params.min_component_voxels && !confident;
        if relabel {
            removed[id as usize] = true;
            stage1_relabeled_voxels += size;
        }
        components.push(ComponentDecision {
            id,
            voxels: size,
            mean_probability: mean,
            relabeled: relabel,
        });
    }
    if stage1_relabeled_voxels > 0 {
        for (i, v) in out.iter_mut().enumerate() {
            let id = labeling.labels[i];
            if id != 0 && removed[id as usize] {
                *v = target;
            }
        }
    }

    let remaining = et_voxels_before - stage1_relabeled_voxels;
    let stage2_mean = if remaining > 0 {
        mean_probability(&|i| {
            let id = labeling.labels[i];
            id != 0 && !removed[id as usize]
        })
    } else {
        None
    };
    let confident = stage2_mean.is_some_and(|m| m >= params.probability_threshold);
    let stage2_triggered = remaining > 0 && remaining < params.min_total_voxels && !confident;
    let mut stage2_relabeled_voxels = 0usize;
    if stage2_triggered {
        for (i, v) in out.iter_mut().enumerate() {
            let id = labeling.labels[i];
            if id != 0 && !removed[id as usize] {
                *v = target;
                stage2_relabeled_voxels += 1;
            }
        }
    }

    let report = RefineReport {
        size_only: probability.is_none(),
        et_voxels_before,
        et_voxels_after: et_voxels_before - stage1_relabeled_voxels - stage2_relabeled_voxels,
        components,
        stage1_relabeled_voxels,
        stage2_mean_probability: stage2_mean,
        stage2_triggered,
        stage2_relabeled_voxels,
    };
    Ok((LabelVolume::new(seg.geometry.clone(), out)?, report))
}
