//! Multi-rater label fusion: binary STAPLE and majority voting, plus a
//! hierarchical wrapper that fuses nested tumor regions and recomposes a
//! label map.

use crate::error::{Error, Result};
use crate::volume::{
    region_mask, BinaryMask, ImageGeometry, LabelSchema, LabelVolume, ProbabilityVolume,
};

/// A set of binary segmentations of the same scene by different raters.
#[derive(Debug, Clone)]
pub struct RaterStack {
    geometry: ImageGeometry,
    masks: Vec<BinaryMask>,
}

impl RaterStack {
    /// At least two raters are required and all must share a geometry.
    pub fn new(masks: Vec<BinaryMask>) -> Result<Self> {
        if masks.len() < 2 {
            return Err(Error::TooFewRaters { count: masks.len() });
        }
        let geometry = masks[0].geometry.clone();
        for m in &masks[1..] {
            geometry.ensure_compatible(&m.geometry, "rater stack")?;
        }
        Ok(RaterStack { geometry, masks })
    }

    pub fn geometry(&self) -> &ImageGeometry {
        &self.geometry
    }

    pub fn rater_count(&self) -> usize {
        self.masks.len()
    }

    pub fn masks(&self) -> &[BinaryMask] {
        &self.masks
    }
}

/// Per-voxel prior probability of foreground used by [`staple_binary`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorMode {
    /// The fraction of raters marking each voxel, clamped away from 0 and 1.
    SampleMean,
    /// One global prior for every voxel, in (0, 1).
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct StapleParams {
    pub initial_sensitivity: f64,
    pub initial_specificity: f64,
    pub max_iterations: usize,
    /// Convergence bound on the change of the summed performance
    /// parameters between iterations.
    pub tolerance: f64,
    /// Posterior cutoff for the consensus mask, exclusive.
    pub threshold: f64,
    pub prior: PriorMode,
}

impl Default for StapleParams {
    fn default() -> Self {
        StapleParams {
            initial_sensitivity: 0.99999,
            initial_specificity: 0.99999,
            max_iterations: 100,
            tolerance: 1e-7,
            threshold: 0.5,
            prior: PriorMode::SampleMean,
        }
    }
}

impl StapleParams {
    pub fn validate(&self) -> Result<()> {
        let unit_open = |v: f64, what: &str| -> Result<()> {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{what} must lie strictly between 0 and 1, got {v}"
                )))
            }
        };
        unit_open(self.initial_sensitivity, "initial sensitivity")?;
        unit_open(self.initial_specificity, "initial specificity")?;
        unit_open(self.threshold, "threshold")?;
        if let PriorMode::Fixed(f) = self.prior {
            unit_open(f, "fixed prior")?;
        }
        if !self.tolerance.is_finite() || self.tolerance <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "tolerance must be a positive number, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Outcome of one STAPLE run, alongside the consensus mask itself.
#[derive(Debug, Clone)]
pub struct StapleState {
    /// Estimated true-positive rate of each rater.
    pub sensitivities: Vec<f64>,
    /// Estimated true-negative rate of each rater.
    pub specificities: Vec<f64>,
    /// Posterior foreground probability per voxel.
    pub posterior: ProbabilityVolume,
    /// Expectation-maximization iterations performed.
    pub iterations: usize,
    pub converged: bool,
    /// True when every rater was empty and the run was skipped.
    pub degenerate: bool,
    /// Observed-data log likelihood per iteration, including a final entry
    /// for the returned posterior. Non-decreasing.
    pub log_likelihood: Vec<f64>,
}

const PRIOR_CLAMP: f64 = 1e-6;
// Keeps rater parameters interior so the log-space expectation step stays
// finite. Clamping is the box-constrained maximizer here, which preserves
// the likelihood ascent.
const PARAM_CLAMP: f64 = 1e-12;

/// Sum in a canonical order so that rater permutations cannot perturb the
/// floating-point result.
fn sorted_sum(buf: &mut [f64]) -> f64 {
    buf.sort_by(f64::total_cmp);
    buf.iter().sum()
}

struct EStep {
    posterior: Vec<f64>,
    log_likelihood: f64,
}

fn e_step(stack: &RaterStack, prior: &[f64], p: &[f64], q: &[f64]) -> EStep {
    let r = stack.rater_count();
    let log_p: Vec<f64> = p.iter().map(|v| v.ln()).collect();
    let log_not_p: Vec<f64> = p.iter().map(|v| (1.0 - v).ln()).collect();
    let log_q: Vec<f64> = q.iter().map(|v| v.ln()).collect();
    let log_not_q: Vec<f64> = q.iter().map(|v| (1.0 - v).ln()).collect();

    let n = prior.len();
    let mut posterior = vec![0.0; n];
    // Kahan summation: a plain sum drifts by ~1e-8 over large grids, enough
    // to make the near-converged likelihood trace look non-monotone.
    let mut log_likelihood = 0.0;
    let mut compensation = 0.0;
    let mut fg = vec![0.0; r];
    let mut bg = vec![0.0; r];
    for i in 0..n {
        for j in 0..r {
            if stack.masks[j].voxels[i] {
                fg[j] = log_p[j];
                bg[j] = log_not_q[j];
            } else {
                fg[j] = log_not_p[j];
                bg[j] = log_q[j];
            }
        }
        let la = prior[i].ln() + sorted_sum(&mut fg);
        let lb = (1.0 - prior[i]).ln() + sorted_sum(&mut bg);
        posterior[i] = 1.0 / (1.0 + (lb - la).exp());
        let m = la.max(lb);
        let term = (m + ((la - m).exp() + (lb - m).exp()).ln()) - compensation;
        let bumped = log_likelihood + term;
        compensation = (bumped - log_likelihood) - term;
        log_likelihood = bumped;
    }
    EStep {
        posterior,
        log_likelihood,
    }
}

fn m_step(stack: &RaterStack, posterior: &[f64], p: &mut [f64], q: &mut [f64]) {
    let mut weight_sum = 0.0;
    let mut complement_sum = 0.0;
    for &w in posterior {
        weight_sum += w;
        complement_sum += 1.0 - w;
    }
    for j in 0..stack.rater_count() {
        let mut marked = 0.0;
        let mut unmarked_bg = 0.0;
        for (i, &w) in posterior.iter().enumerate() {
            if stack.masks[j].voxels[i] {
                marked += w;
            } else {
                unmarked_bg += 1.0 - w;
            }
        }
        // A vanishing denominator leaves the parameter at its last value.
        if weight_sum > 0.0 {
            p[j] = (marked / weight_sum).clamp(PARAM_CLAMP, 1.0 - PARAM_CLAMP);
        }
        if complement_sum > 0.0 {
            q[j] = (unmarked_bg / complement_sum).clamp(PARAM_CLAMP, 1.0 - PARAM_CLAMP);
        }
    }
}

/// Estimate a consensus segmentation and per-rater performance by
/// expectation maximization over binary rater decisions.
///
/// The mask holds the voxels whose posterior reaches the decision
/// threshold.
pub fn staple_binary(
    stack: &RaterStack,
    params: &StapleParams,
) -> Result<(BinaryMask, StapleState)> {
    params.validate()?;
    let r = stack.rater_count();
    let n = stack.geometry().voxel_count();
    let mut p = vec![params.initial_sensitivity; r];
    let mut q = vec![params.initial_specificity; r];

    if stack.masks().iter().all(|m| m.is_empty()) {
        let state = StapleState {
            sensitivities: p,
            specificities: q,
            posterior: ProbabilityVolume::new(stack.geometry().clone(), vec![0.0; n])?,
            iterations: 0,
            converged: true,
            degenerate: true,
            log_likelihood: Vec::new(),
        };
        return Ok((BinaryMask::empty(stack.geometry().clone()), state));
    }

    let prior: Vec<f64> = match params.prior {
        PriorMode::Fixed(f) => vec![f; n],
        PriorMode::SampleMean => (0..n)
            .map(|i| {
                let votes = stack.masks.iter().filter(|m| m.voxels[i]).count();
                (votes as f64 / r as f64).clamp(PRIOR_CLAMP, 1.0 - PRIOR_CLAMP)
            })
            .collect(),
    };

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..params.max_iterations {
        let step = e_step(stack, &prior, &p, &q);
        trace.push(step.log_likelihood);
        let before: f64 = p.iter().chain(q.iter()).sum();
        m_step(stack, &step.posterior, &mut p, &mut q);
        let after: f64 = p.iter().chain(q.iter()).sum();
        iterations += 1;
        if (after - before).abs() < params.tolerance {
            converged = true;
            break;
        }
    }
    // Recompute the posterior under the final parameters so the returned
    // state is self-consistent.
    let last = e_step(stack, &prior, &p, &q);
    trace.push(last.log_likelihood);

    let consensus_voxels: Vec<bool> = last
        .posterior
        .iter()
        .map(|&w| w >= params.threshold)
        .collect();
    let state = StapleState {
        sensitivities: p,
        specificities: q,
        posterior: ProbabilityVolume::new(stack.geometry().clone(), last.posterior)?,
        iterations,
        converged,
        degenerate: false,
        log_likelihood: trace,
    };
    Ok((BinaryMask::new(stack.geometry().clone(), consensus_voxels)?, state))
}

/// Voxels where strictly more than `fraction` of the raters agree.
pub fn majority_vote(stack: &RaterStack, fraction: f64) -> Result<BinaryMask> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "vote fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let r = stack.rater_count() as f64;
    let n = stack.geometry().voxel_count();
    let mut out = vec![false; n];
    for (i, o) in out.iter_mut().enumerate() {
        let votes = stack.masks.iter().filter(|m| m.voxels[i]).count();
        *o = votes as f64 > fraction * r;
    }
    BinaryMask::new(stack.geometry().clone(), out)
}

/// STAPLE outcome for one named region of a hierarchical fusion.
#[derive(Debug, Clone)]
pub struct RegionConsensus {
    pub region: String,
    pub consensus: BinaryMask,
    pub state: StapleState,
}

fn hierarchy_labels(schema: &LabelSchema) -> Result<(u8, u8, u8)> {
    for name in ["ET", "NCR", "ED"] {
        if schema.labels().get(name).is_none() {
            return Err(Error::InvalidSchema(format!(
                "hierarchical fusion needs a label named {name}"
            )));
        }
    }
    for name in ["ET", "TC", "WT"] {
        if !schema.regions().contains_key(name) {
            return Err(Error::InvalidSchema(format!(
                "hierarchical fusion needs a region named {name}"
            )));
        }
    }
    Ok((
        schema.label_value("ET")?,
        schema.label_value("NCR")?,
        schema.label_value("ED")?,
    ))
}

fn region_stack(segs: &[LabelVolume], schema: &LabelSchema, region: &str) -> Result<RaterStack> {
    let masks = segs
        .iter()
        .map(|s| region_mask(s, schema, region))
        .collect::<Result<Vec<_>>>()?;
    RaterStack::new(masks)
}

fn compose_hierarchy(
    geometry: &ImageGeometry,
    et: &BinaryMask,
    tc: &BinaryMask,
    wt: &BinaryMask,
    labels: (u8, u8, u8),
) -> Result<LabelVolume> {
    let (et_label, ncr_label, ed_label) = labels;
    let mut out = vec![0u8; geometry.voxel_count()];
    for (i, o) in out.iter_mut().enumerate() {
        // Inner regions defer to the outer ones, so a stray inner voxel
        // outside its parent falls back to the parent's tissue.
        let w = wt.voxels[i];
        let t = tc.voxels[i] && w;
        let e = et.voxels[i] && t;
        *o = if e {
            et_label
        } else if t {
            ncr_label
        } else if w {
            ed_label
        } else {
            0
        };
    }
    LabelVolume::new(geometry.clone(), out)
}

/// Fuse multi-rater label maps by running STAPLE independently on each of
/// the nested regions and stacking the consensus masks back into labels.
pub fn fuse_hierarchical(
    segs: &[LabelVolume],
    schema: &LabelSchema,
    params: &StapleParams,
) -> Result<(LabelVolume, Vec<RegionConsensus>)> {
    let labels = hierarchy_labels(schema)?;
    let mut states = Vec::new();
    for region in ["ET", "TC", "WT"] {
        let stack = region_stack(segs, schema, region)?;
        let (consensus, state) = staple_binary(&stack, params)?;
        states.push(RegionConsensus {
            region: region.to_string(),
            consensus,
            state,
        });
    }
    let fused = compose_hierarchy(
        &segs[0].geometry,
        &states[0].consensus,
        &states[1].consensus,
        &states[2].consensus,
        labels,
    )?;
    Ok((fused, states))
}

/// Hierarchical fusion with per-region majority voting instead of STAPLE.
pub fn fuse_hierarchical_majority(
    segs: &[LabelVolume],
    schema: &LabelSchema,
    fraction: f64,
) -> Result<LabelVolume> {
    let labels = hierarchy_labels(schema)?;
    let mut consensus = Vec::new();
    for region in ["ET", "TC", "WT"] {
        let stack = region_stack(segs, schema, region)?;
        consensus.push(majority_vote(&stack, fraction)?);
    }
    compose_hierarchy(
        &segs[0].geometry,
        &consensus[0],
        &consensus[1],
        &consensus[2],
        labels,
    )
}
