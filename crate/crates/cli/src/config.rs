//! Layered run configuration: built-in defaults, a TOML file on top, then
//! command-line flags on top of that.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fusemetrics::fusion::{PriorMode, StapleParams};
use fusemetrics::metrics::{EvalParams, Hd95Params, LesionMatchParams, PercentileMethod};
use fusemetrics::morphology::Connectivity;
use fusemetrics::postprocess::EtRefineParams;
use fusemetrics::preprocess::PreprocessPlan;
use fusemetrics::volume::LabelSchema;

use crate::cli::{CommonArgs, ConnectivityArg, FusionArg, PercentileArg};
use crate::{io_error, usage, RunError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMethod {
    Staple,
    Majority,
}

/// Consensus-estimation settings, mirroring the fusion parameters with a
/// config-friendly prior encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StapleConfig {
    pub initial_sensitivity: f64,
    pub initial_specificity: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub threshold: f64,
    /// Either the string "sample_mean" or a fixed probability in (0, 1).
    pub prior: PriorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorConfig {
    Fixed(f64),
    Named(String),
}

impl Default for StapleConfig {
    fn default() -> Self {
        let p = StapleParams::default();
        StapleConfig {
            initial_sensitivity: p.initial_sensitivity,
            initial_specificity: p.initial_specificity,
            max_iterations: p.max_iterations,
            tolerance: p.tolerance,
            threshold: p.threshold,
            prior: PriorConfig::Named("sample_mean".to_string()),
        }
    }
}

/// Filename conventions for dataset-directory scanning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuffixMap {
    /// Ground-truth file, as in <case>-seg.nii.gz.
    pub seg: String,
    /// Prefix of prediction files, as in <case>-pred*.nii.gz.
    pub pred: String,
    /// Prefix of the enhancing-tumor probability map.
    pub prob: String,
    /// Modality image suffixes, scanned in this order.
    pub images: Vec<String>,
}

impl Default for SuffixMap {
    fn default() -> Self {
        SuffixMap {
            seg: "-seg".to_string(),
            pred: "-pred".to_string(),
            prob: "-prob".to_string(),
            images: vec![
                "-t1c".to_string(),
                "-t1n".to_string(),
                "-t2f".to_string(),
                "-t2w".to_string(),
            ],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Worker threads for batch subcommands. 1 by default.
    pub workers: usize,
    pub fusion: FusionMethod,
    /// Rater fraction a voxel must exceed under majority fusion.
    pub vote_fraction: f64,
    /// Report file, or output directory for volume-writing subcommands.
    pub out: Option<PathBuf>,
    pub schema: LabelSchema,
    pub hd95: Hd95Params,
    pub lesion: LesionMatchParams,
    pub staple: StapleConfig,
    pub refine: EtRefineParams,
    pub preprocess: PreprocessPlan,
    pub suffixes: SuffixMap,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            workers: 1,
            fusion: FusionMethod::Staple,
            vote_fraction: 0.5,
            out: None,
            schema: LabelSchema::default(),
            hd95: Hd95Params::default(),
            lesion: LesionMatchParams::default(),
            staple: StapleConfig::default(),
            refine: EtRefineParams::default(),
            preprocess: PreprocessPlan::default(),
            suffixes: SuffixMap::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, RunError> {
        let text = fs::read_to_string(path)
            .map_err(|e| io_error(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
    }

    /// Overlay command-line flags; flags win over file values.
    pub fn apply_flags(&mut self, args: &CommonArgs) -> Result<(), RunError> {
        if let Some(path) = &args.schema {
            self.schema = load_schema(path)?;
        }
        if let Some(w) = args.workers {
            self.workers = w;
        }
        if let Some(o) = &args.out {
            self.out = Some(o.clone());
        }
        if let Some(c) = args.connectivity {
            let c = match c {
                ConnectivityArg::Six => Connectivity::Six,
                ConnectivityArg::Eighteen => Connectivity::Eighteen,
                ConnectivityArg::TwentySix => Connectivity::TwentySix,
            };
            self.lesion.connectivity = c;
            self.refine.connectivity = c;
        }
        if let Some(p) = args.penalty_mm {
            self.hd95.penalty_mm = p;
            self.lesion.penalty_mm = p;
        }
        if let Some(v) = args.et_min_component {
            self.refine.min_component_voxels = v;
        }
        if let Some(v) = args.et_min_total {
            self.refine.min_total_voxels = v;
        }
        if let Some(v) = args.et_prob_threshold {
            self.refine.probability_threshold = v;
        }
        if let Some(f) = args.fusion {
            self.fusion = match f {
                FusionArg::Staple => FusionMethod::Staple,
                FusionArg::Majority => FusionMethod::Majority,
            };
        }
        if let Some(m) = args.percentile_method {
            let m = match m {
                PercentileArg::NearestRank => PercentileMethod::NearestRank,
                PercentileArg::Linear => PercentileMethod::Linear,
            };
            self.hd95.percentile = m;
            self.lesion.percentile = m;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.workers == 0 {
            return Err(usage("workers must be at least 1"));
        }
        if !(self.vote_fraction > 0.0 && self.vote_fraction <= 1.0) {
            return Err(usage(format!(
                "vote_fraction {} outside (0, 1]",
                self.vote_fraction
            )));
        }
        for (what, v) in [
            ("hd95.penalty_mm", self.hd95.penalty_mm),
            ("lesion.penalty_mm", self.lesion.penalty_mm),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(usage(format!(
                    "{what} must be a nonnegative number, got {v}"
                )));
            }
        }
        if self.lesion.min_lesion_size == 0 {
            return Err(usage("lesion.min_lesion_size must be at least 1"));
        }
        for s in self.preprocess.target_spacing {
            if !s.is_finite() || s <= 0.0 {
                return Err(usage(format!(
                    "preprocess.target_spacing must be positive, got {s}"
                )));
            }
        }
        if self.preprocess.fov.contains(&0) {
            return Err(usage("preprocess.fov axes must be at least 1"));
        }
        self.staple_params()?
            .validate()
            .map_err(|e| usage(e.to_string()))?;
        self.refine.validate().map_err(|e| usage(e.to_string()))?;
        Ok(())
    }

    pub fn staple_params(&self) -> Result<StapleParams, RunError> {
        let prior = match &self.staple.prior {
            PriorConfig::Fixed(v) => PriorMode::Fixed(*v),
            PriorConfig::Named(name) if name == "sample_mean" => PriorMode::SampleMean,
            PriorConfig::Named(name) => {
                return Err(usage(format!(
                    "unknown staple prior {name:?}; use \"sample_mean\" or a probability"
                )))
            }
        };
        Ok(StapleParams {
            initial_sensitivity: self.staple.initial_sensitivity,
            initial_specificity: self.staple.initial_specificity,
            max_iterations: self.staple.max_iterations,
            tolerance: self.staple.tolerance,
            threshold: self.staple.threshold,
            prior,
        })
    }

    pub fn eval_params(&self) -> EvalParams {
        EvalParams {
            hd95: self.hd95,
            lesion: self.lesion.clone(),
        }
    }
}

fn load_schema(path: &Path) -> Result<LabelSchema, RunError> {
    let text =
        fs::read_to_string(path).map_err(|e| io_error(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}
