//! Overlap and surface-distance metrics, classic and lesion-wise.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::morphology::{boundary, connected_components, dilate, distance_transform, Connectivity};
use crate::volume::{region_mask, BinaryMask, LabelSchema, LabelVolume};

/// Distance reported when exactly one of the two masks is empty.
pub const DEFAULT_PENALTY_MM: f64 = 374.0;

/// Which voxels of a mask count as its surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfacePoints {
    /// Mask voxels with at least one face-neighbor outside the mask.
    Boundary,
    /// Every mask voxel.
    FullMask,
}

/// How the 95th percentile of a distance sample is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PercentileMethod {
    /// Value at the 1-based rank `ceil(0.95 n)` of the sorted sample.
    NearestRank,
    /// Linear interpolation between the two straddling order statistics.
    Linear,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct Hd95Params {
    pub penalty_mm: f64,
    pub surface: SurfacePoints,
    pub percentile: PercentileMethod,
}

impl Default for Hd95Params {
    fn default() -> Self {
        Hd95Params {
            penalty_mm: DEFAULT_PENALTY_MM,
            surface: SurfacePoints::Boundary,
            percentile: PercentileMethod::NearestRank,
        }
    }
}

/// Dice-Sorensen coefficient. Two empty masks score 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.geometry.ensure_compatible(&b.geometry, "dice")?;
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&va, &vb) in a.voxels.iter().zip(&b.voxels) {
        inter += (va && vb) as usize;
        total += va as usize + vb as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

fn percentile95(sample: &mut [f64], method: PercentileMethod) -> f64 {
    debug_assert!(!sample.is_empty());
    sample.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let n = sample.len();
    match method {
        PercentileMethod::NearestRank => {
            let rank = (0.95 * n as f64).ceil() as usize;
            sample[rank.clamp(1, n) - 1]
        }
        PercentileMethod::Linear => {
            let pos = 0.95 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = pos - lo as f64;
            sample[lo] + (sample[hi] - sample[lo]) * frac
        }
    }
}

fn surface_of(mask: &BinaryMask, surface: SurfacePoints) -> BinaryMask {
    match surface {
        SurfacePoints::Boundary => boundary(mask),
        SurfacePoints::FullMask => mask.clone(),
    }
}

fn directed_p95(from: &BinaryMask, to_distance: &[f64], method: PercentileMethod) -> f64 {
    let mut sample: Vec<f64> = from
        .voxels
        .iter()
        .zip(to_distance)
        .filter(|(&v, _)| v)
        .map(|(_, &d)| d)
        .collect();
    percentile95(&mut sample, method)
}

/// Symmetric 95th-percentile surface distance in millimeters.
///
/// Both masks empty scores 0; exactly one empty scores the penalty.
pub fn hd95_with(a: &BinaryMask, b: &BinaryMask, params: &Hd95Params) -> Result<f64> {
    a.geometry.ensure_compatible(&b.geometry, "hd95")?;
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return Ok(0.0),
        (true, false) | (false, true) => return Ok(params.penalty_mm),
        (false, false) => {}
    }
    let sa = surface_of(a, params.surface);
    let sb = surface_of(b, params.surface);
    let da = distance_transform(&sa);
    let db = distance_transform(&sb);
    let ab = directed_p95(&sa, &db, params.percentile);
    let ba = directed_p95(&sb, &da, params.percentile);
    Ok(ab.max(ba))
}

/// [`hd95_with`] under default parameters.
pub fn hd95(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    hd95_with(a, b, &Hd95Params::default())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LesionMatchParams {
    pub connectivity: Connectivity,
    /// Components smaller than this are dropped before matching.
    pub min_lesion_size: usize,
    /// Reference lesions are grown this many steps when testing overlap.
    pub dilation_radius: usize,
    pub penalty_mm: f64,
    pub percentile: PercentileMethod,
}

impl Default for LesionMatchParams {
    fn default() -> Self {
        LesionMatchParams {
            connectivity: Connectivity::TwentySix,
            min_lesion_size: 1,
            dilation_radius: 1,
            penalty_mm: DEFAULT_PENALTY_MM,
            percentile: PercentileMethod::NearestRank,
        }
    }
}

/// One detected reference lesion and the prediction components scored
/// against it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LesionMatch {
    pub gt_id: u32,
    /// Prediction components assigned here by maximal overlap. May be empty
    /// when every overlapping component was claimed by another lesion.
    pub pred_ids: Vec<u32>,
    pub dsc: f64,
    pub hd95_mm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LesionMatchTable {
    pub matches: Vec<LesionMatch>,
    pub true_positives: usize,
    pub false_negatives: usize,
    pub false_positives: usize,
}

/// Pair up reference and predicted lesions.
///
/// A reference lesion counts as detected when any sufficiently large
/// prediction component touches its dilated extent, even if that component
/// is assigned to a different lesion for scoring. Unmatched prediction
/// components count as false positives.
pub fn match_lesions(
    gt: &BinaryMask,
    pred: &BinaryMask,
    params: &LesionMatchParams,
) -> Result<LesionMatchTable> {
    gt.geometry.ensure_compatible(&pred.geometry, "match_lesions")?;
    let cc_gt = connected_components(gt, params.connectivity);
    let cc_pred = connected_components(pred, params.connectivity);
    let counted = |sizes: &[usize]| -> Vec<u32> {
        (1..=sizes.len() as u32)
            .filter(|&id| sizes[id as usize - 1] >= params.min_lesion_size)
            .collect()
    };
    let gt_ids = counted(cc_gt.sizes());
    let pred_ids = counted(cc_pred.sizes());
    let pred_counted: Vec<bool> = {
        let mut v = vec![false; cc_pred.count() + 1];
        for &id in &pred_ids {
            v[id as usize] = true;
        }
        v
    };

    // Voxel overlap between each dilated reference lesion and each counted
    // prediction component.
    let mut overlap: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for &g in &gt_ids {
        let grown = dilate(
            &cc_gt.component_mask(g),
            params.dilation_radius,
            params.connectivity,
        );
        for (i, &inside) in grown.voxels.iter().enumerate() {
            if !inside {
                continue;
            }
            let p = cc_pred.labels[i];
            if p != 0 && pred_counted[p as usize] {
                *overlap.entry((g, p)).or_insert(0) += 1;
            }
        }
    }

    // Each prediction component goes to the reference lesion it overlaps
    // most; ties favor the earlier lesion.
    let mut assigned: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    let mut false_positives = 0usize;
    for &p in &pred_ids {
        let best = gt_ids
            .iter()
            .filter_map(|&g| overlap.get(&(g, p)).map(|&ov| (g, ov)))
            .max_by(|x, y| x.1.cmp(&y.1).then(y.0.cmp(&x.0)));
        match best {
            Some((g, _)) => assigned.entry(g).or_default().push(p),
            None => false_positives += 1,
        }
    }

    let hd_params = Hd95Params {
        penalty_mm: params.penalty_mm,
        surface: SurfacePoints::Boundary,
        percentile: params.percentile,
    };
    let mut matches = Vec::new();
    let mut false_negatives = 0usize;
    for &g in &gt_ids {
        let detected = pred_ids.iter().any(|&p| overlap.contains_key(&(g, p)));
        if !detected {
            false_negatives += 1;
            continue;
        }
        let gt_mask = cc_gt.component_mask(g);
        let preds = assigned.get(&g).cloned().unwrap_or_default();
        let mut union = BinaryMask::empty(pred.geometry.clone());
        for &p in &preds {
            for (o, &l) in union.voxels.iter_mut().zip(&cc_pred.labels) {
                *o |= l == p;
            }
        }
        let dsc = dice(&gt_mask, &union)?;
        let hd95_mm = hd95_with(&gt_mask, &union, &hd_params)?;
        matches.push(LesionMatch {
            gt_id: g,
            pred_ids: preds,
            dsc,
            hd95_mm,
        });
    }

    Ok(LesionMatchTable {
        true_positives: matches.len(),
        matches,
        false_negatives,
        false_positives,
    })
}

/// Mean per-lesion Dice, counting misses and spurious components as zero.
/// No lesions on either side scores 1.
pub fn lesion_wise_dice(table: &LesionMatchTable) -> f64 {
    let denom = table.true_positives + table.false_negatives + table.false_positives;
    if denom == 0 {
        return 1.0;
    }
    let sum: f64 = table.matches.iter().map(|m| m.dsc).sum();
    sum / denom as f64
}

/// Mean per-lesion HD95, charging the penalty for misses and spurious
/// components. No lesions on either side scores 0.
pub fn lesion_wise_hd95(table: &LesionMatchTable, penalty_mm: f64) -> f64 {
    let denom = table.true_positives + table.false_negatives + table.false_positives;
    if denom == 0 {
        return 0.0;
    }
    let sum: f64 = table.matches.iter().map(|m| m.hd95_mm).sum();
    (sum + penalty_mm * (table.false_negatives + table.false_positives) as f64) / denom as f64
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalParams {
    pub hd95: Hd95Params,
    pub lesion: LesionMatchParams,
}


#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub dsc: f64,
    pub hd95_mm: f64,
    pub lw_dsc: f64,
    pub lw_hd95_mm: f64,
    #[serde(rename = "tp")]
    pub true_positives: usize,
    #[serde(rename = "fn")]
    pub false_negatives: usize,
    #[serde(rename = "fp")]
    pub false_positives: usize,
}

/// Column means over the regions of one case.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricMeans {
    pub dsc: f64,
    pub hd95_mm: f64,
    pub lw_dsc: f64,
    pub lw_hd95_mm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseMetrics {
    /// One entry per schema region, in schema region order.
    pub regions: Vec<(String, RegionMetrics)>,
}

impl CaseMetrics {
    pub fn average(&self) -> MetricMeans {
        let n = self.regions.len().max(1) as f64;
        let mut m = MetricMeans {
            dsc: 0.0,
            hd95_mm: 0.0,
            lw_dsc: 0.0,
            lw_hd95_mm: 0.0,
        };
        for (_, r) in &self.regions {
            m.dsc += r.dsc;
            m.hd95_mm += r.hd95_mm;
            m.lw_dsc += r.lw_dsc;
            m.lw_hd95_mm += r.lw_hd95_mm;
        }
        m.dsc /= n;
        m.hd95_mm /= n;
        m.lw_dsc /= n;
        m.lw_hd95_mm /= n;
        m
    }
}

/// Score a prediction against a reference label map over every schema
/// region.
pub fn evaluate_case(
    gt: &LabelVolume,
    pred: &LabelVolume,
    schema: &LabelSchema,
    params: &EvalParams,
) -> Result<CaseMetrics> {
    gt.geometry.ensure_compatible(&pred.geometry, "evaluate_case")?;
    let mut regions = Vec::new();
    for name in schema.region_names() {
        let gm = region_mask(gt, schema, name)?;
        let pm = region_mask(pred, schema, name)?;
        let table = match_lesions(&gm, &pm, &params.lesion)?;
        regions.push((
            name.to_string(),
            RegionMetrics {
                dsc: dice(&gm, &pm)?,
                hd95_mm: hd95_with(&gm, &pm, &params.hd95)?,
                lw_dsc: lesion_wise_dice(&table),
                lw_hd95_mm: lesion_wise_hd95(&table, params.lesion.penalty_mm),
                true_positives: table.true_positives,
                false_negatives: table.false_negatives,
                false_positives: table.false_positives,
            },
        ));
    }
    Ok(CaseMetrics { regions })
}
