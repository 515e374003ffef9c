//! Subcommand execution: per-case pipelines over a bounded worker pool,
//! with failing cases reported and skipped rather than aborting the batch.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use fusemetrics::fusion::{fuse_hierarchical, fuse_hierarchical_majority};
use fusemetrics::metrics::evaluate_case;
use fusemetrics::nifti::{self, NiftiDatatype};
use fusemetrics::postprocess::{refine_enhancing_tumor, RefineReport};
use fusemetrics::preprocess::{preprocess_case, PreprocessRecord};
use fusemetrics::volume::{region_mask, LabelSchema, LabelVolume};

use crate::cli::{Cli, Command, ReportFormat};
use crate::config::{Config, FusionMethod};
use crate::manifest::{load_manifest, CaseEntry, CaseManifest};
use crate::report::{self, CaseFailure, Report, ReportRow};
use crate::{io_error, RunError};

/// Run the parsed invocation. Returns the number of failed cases; fatal
/// problems outside per-case work come back as errors.
pub fn execute(cli: Cli) -> Result<usize, RunError> {
    let mut config = match &cli.common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    config.apply_flags(&cli.common)?;
    config.validate()?;
    let format = cli.common.format.unwrap_or(ReportFormat::Csv);

    match &cli.command {
        Command::Info(args) => run_info(&args.paths, format, config.out.as_deref()).map(|_| 0),
        Command::Report(args) => {
            let rep = report::parse_json_report(&args.input)?;
            report::write_report(&rep, format, config.out.as_deref())?;
            Ok(0)
        }
        Command::Evaluate(args) => {
            let manifest = load_manifest(&args.manifest, &config.suffixes)?;
            run_evaluate(&manifest, &config, format)
        }
        Command::Fuse(args) => {
            let manifest = load_manifest(&args.manifest, &config.suffixes)?;
            run_fuse(&manifest, &config)
        }
        Command::Postprocess(args) => {
            let manifest = load_manifest(&args.manifest, &config.suffixes)?;
            run_postprocess(&manifest, &config)
        }
        Command::Preprocess(args) => {
            let manifest = load_manifest(&args.manifest, &config.suffixes)?;
            run_preprocess(&manifest, &config)
        }
    }
}

struct CaseOutcome<T> {
    case_id: String,
    result: Result<T, String>,
}

/// Map every case through `work` on a pool of `config.workers` threads.
/// Results come back in manifest order regardless of worker count.
fn run_cases<T, F>(
    config: &Config,
    cases: &[CaseEntry],
    work: F,
) -> Result<Vec<CaseOutcome<T>>, RunError>
where
    T: Send,
    F: Fn(&CaseEntry) -> Result<T, String> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| io_error(format!("failed to start worker pool: {e}")))?;
    Ok(pool.install(|| {
        cases
            .par_iter()
            .map(|case| CaseOutcome {
                case_id: case.case_id.clone(),
                result: work(case),
            })
            .collect()
    }))
}

fn split_outcomes<T>(outcomes: Vec<CaseOutcome<T>>) -> (Vec<(String, T)>, Vec<CaseFailure>) {
    let mut done = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome.result {
            Ok(value) => done.push((outcome.case_id, value)),
            Err(error) => {
                log::error!("case {}: {error}", outcome.case_id);
                failures.push(CaseFailure {
                    case_id: outcome.case_id,
                    error,
                });
            }
        }
    }
    (done, failures)
}

fn read_labels(path: &Path, schema: &LabelSchema) -> Result<LabelVolume, String> {
    nifti::read_label_volume(path, schema).map_err(|e| format!("{}: {e}", path.display()))
}

fn out_directory(config: &Config) -> Result<PathBuf, RunError> {
    let dir = config.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| io_error(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_json_sidecar<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| io_error(format!("{}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_error(format!("{}: {e}", path.display())))
}

fn run_evaluate(
    manifest: &CaseManifest,
    config: &Config,
    format: ReportFormat,
) -> Result<usize, RunError> {
    let params = config.eval_params();
    let outcomes = run_cases(config, &manifest.cases, |case| {
        let gt_path = case
            .gt
            .as_ref()
            .ok_or_else(|| "no ground truth listed".to_string())?;
        if case.preds.len() != 1 {
            return Err(format!(
                "evaluation needs exactly one prediction, found {}",
                case.preds.len()
            ));
        }
        let gt = read_labels(gt_path, &config.schema)?;
        let pred = read_labels(&case.preds[0], &config.schema)?;
        evaluate_case(&gt, &pred, &config.schema, &params).map_err(|e| e.to_string())
    })?;
    let (scored, failures) = split_outcomes(outcomes);
    let failed = failures.len();

    let mut rows = Vec::new();
    for (case_id, metrics) in &scored {
        for (region, m) in &metrics.regions {
            rows.push(ReportRow {
                case_id: case_id.clone(),
                region: region.clone(),
                dsc: m.dsc,
                hd95_mm: m.hd95_mm,
                lw_dsc: m.lw_dsc,
                lw_hd95_mm: m.lw_hd95_mm,
                tp: m.true_positives,
                fn_count: m.false_negatives,
                fp: m.false_positives,
            });
        }
    }
    let region_order: Vec<String> = config
        .schema
        .region_names()
        .into_iter()
        .map(String::from)
        .collect();
    let summary = report::summarize(&rows, &region_order);
    let rep = Report {
        rows,
        summary,
        failures,
        config_echo: config.clone(),
        tool_version: report::TOOL_VERSION.to_string(),
    };
    report::write_report(&rep, format, config.out.as_deref())?;
    Ok(failed)
}

#[derive(Serialize)]
struct RegionFusionSummary {
    region: String,
    sensitivities: Vec<f64>,
    specificities: Vec<f64>,
    iterations: usize,
    converged: bool,
    degenerate: bool,
    log_likelihood: Vec<f64>,
}

#[derive(Serialize)]
struct CaseFusionSummary {
    case_id: String,
    output: String,
    regions: Vec<RegionFusionSummary>,
}

/// Every region must stay inside the next larger one in the fused output.
fn check_nesting(fused: &LabelVolume, schema: &LabelSchema) -> Result<(), String> {
    let et = region_mask(fused, schema, "ET").map_err(|e| e.to_string())?;
    let tc = region_mask(fused, schema, "TC").map_err(|e| e.to_string())?;
    let wt = region_mask(fused, schema, "WT").map_err(|e| e.to_string())?;
    for i in 0..et.voxels.len() {
        if (et.voxels[i] && !tc.voxels[i]) || (tc.voxels[i] && !wt.voxels[i]) {
            return Err("fused output violates region nesting".to_string());
        }
    }
    Ok(())
}

fn run_fuse(manifest: &CaseManifest, config: &Config) -> Result<usize, RunError> {
    let out_dir = out_directory(config)?;
    let staple = config.staple_params()?;
    let outcomes = run_cases(config, &manifest.cases, |case| {
        if case.preds.len() < 2 {
            return Err(format!(
                "fusion needs at least 2 predictions, found {}",
                case.preds.len()
            ));
        }
        let mut segs = Vec::with_capacity(case.preds.len());
        for path in &case.preds {
            segs.push(read_labels(path, &config.schema)?);
        }
        let (fused, states) = match config.fusion {
            FusionMethod::Staple => {
                fuse_hierarchical(&segs, &config.schema, &staple).map_err(|e| e.to_string())?
            }
            FusionMethod::Majority => {
                let fused =
                    fuse_hierarchical_majority(&segs, &config.schema, config.vote_fraction)
                        .map_err(|e| e.to_string())?;
                (fused, Vec::new())
            }
        };
        check_nesting(&fused, &config.schema)?;
        let file = format!("{}-fused.nii.gz", case.case_id);
        nifti::write_label_volume(&out_dir.join(&file), &fused).map_err(|e| e.to_string())?;
        let regions = states
            .into_iter()
            .map(|rc| RegionFusionSummary {
                region: rc.region,
                sensitivities: rc.state.sensitivities,
                specificities: rc.state.specificities,
                iterations: rc.state.iterations,
                converged: rc.state.converged,
                degenerate: rc.state.degenerate,
                log_likelihood: rc.state.log_likelihood,
            })
            .collect();
        Ok((file, regions))
    })?;
    let (done, failures) = split_outcomes(outcomes);
    if config.fusion == FusionMethod::Staple {
        let summaries: Vec<CaseFusionSummary> = done
            .into_iter()
            .map(|(case_id, (output, regions))| CaseFusionSummary {
                case_id,
                output,
                regions,
            })
            .collect();
        write_json_sidecar(&out_dir.join("fusion-states.json"), &summaries)?;
    }
    Ok(failures.len())
}

#[derive(Serialize)]
struct CaseRefineSummary {
    case_id: String,
    output: String,
    report: RefineReport,
}

fn run_postprocess(manifest: &CaseManifest, config: &Config) -> Result<usize, RunError> {
    let out_dir = out_directory(config)?;
    let outcomes = run_cases(config, &manifest.cases, |case| {
        if case.preds.len() != 1 {
            return Err(format!(
                "refinement needs exactly one prediction, found {}",
                case.preds.len()
            ));
        }
        let seg = read_labels(&case.preds[0], &config.schema)?;
        let prob = match &case.prob {
            Some(path) => Some(
                nifti::read_probability_volume(path)
                    .map_err(|e| format!("{}: {e}", path.display()))?,
            ),
            None => None,
        };
        let (refined, refine_report) =
            refine_enhancing_tumor(&seg, prob.as_ref(), &config.schema, &config.refine)
                .map_err(|e| e.to_string())?;
        let file = format!("{}-refined.nii.gz", case.case_id);
        nifti::write_label_volume(&out_dir.join(&file), &refined).map_err(|e| e.to_string())?;
        Ok((file, refine_report))
    })?;
    let (done, failures) = split_outcomes(outcomes);
    let summaries: Vec<CaseRefineSummary> = done
        .into_iter()
        .map(|(case_id, (output, report))| CaseRefineSummary {
            case_id,
            output,
            report,
        })
        .collect();
    write_json_sidecar(&out_dir.join("postprocess-reports.json"), &summaries)?;
    Ok(failures.len())
}

#[derive(Serialize)]
struct CasePreprocessSummary {
    case_id: String,
    outputs: Vec<String>,
    record: PreprocessRecord,
}

fn run_preprocess(manifest: &CaseManifest, config: &Config) -> Result<usize, RunError> {
    let out_dir = out_directory(config)?;
    let plan = &config.preprocess;
    let outcomes = run_cases(config, &manifest.cases, |case| {
        if case.images.is_empty() && case.gt.is_none() {
            return Err("no modality images or segmentation found".to_string());
        }
        let mut images = Vec::with_capacity(case.images.len());
        for (_, path) in &case.images {
            images
                .push(nifti::read_volume(path).map_err(|e| format!("{}: {e}", path.display()))?);
        }
        let labels = match &case.gt {
            Some(path) => Some(read_labels(path, &config.schema)?),
            None => None,
        };
        let (pre_images, pre_labels, record) =
            preprocess_case(&images, labels.as_ref(), plan).map_err(|e| e.to_string())?;
        let mut outputs = Vec::new();
        for ((suffix, _), image) in case.images.iter().zip(&pre_images) {
            let file = format!("{}{}.nii.gz", case.case_id, suffix);
            nifti::write_volume(&out_dir.join(&file), image, NiftiDatatype::Float32)
                .map_err(|e| e.to_string())?;
            outputs.push(file);
        }
        if let Some(l) = &pre_labels {
            let file = format!("{}{}.nii.gz", case.case_id, config.suffixes.seg);
            nifti::write_label_volume(&out_dir.join(&file), l).map_err(|e| e.to_string())?;
            outputs.push(file);
        }
        Ok((outputs, record))
    })?;
    let (done, failures) = split_outcomes(outcomes);
    let summaries: Vec<CasePreprocessSummary> = done
        .into_iter()
        .map(|(case_id, (outputs, record))| CasePreprocessSummary {
            case_id,
            outputs,
            record,
        })
        .collect();
    write_json_sidecar(&out_dir.join("preprocess-records.json"), &summaries)?;
    Ok(failures.len())
}

#[derive(Serialize)]
struct InfoEntry {
    path: String,
    datatype: &'static str,
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    origin_mm: [f64; 3],
    gzipped: bool,
    big_endian: bool,
    sform_code: i16,
    qform_code: i16,
    scl_slope: f32,
    scl_inter: f32,
}

fn run_info(paths: &[PathBuf], format: ReportFormat, out: Option<&Path>) -> Result<(), RunError> {
    let mut entries = Vec::with_capacity(paths.len());
    for path in paths {
        let info = nifti::read_info(path).map_err(|e| io_error(e.to_string()))?;
        entries.push(InfoEntry {
            path: path.display().to_string(),
            datatype: info.datatype.name(),
            dims: info.geometry.dims,
            spacing_mm: info.geometry.spacing,
            origin_mm: info.geometry.origin,
            gzipped: info.gzipped,
            big_endian: info.big_endian,
            sform_code: info.sform_code,
            qform_code: info.qform_code,
            scl_slope: info.scl_slope,
            scl_inter: info.scl_inter,
        });
    }
    let text = match format {
        ReportFormat::Json => {
            let mut t = serde_json::to_string_pretty(&entries).expect("info serializes");
            t.push('\n');
            t
        }
        ReportFormat::Csv => {
            let mut t = String::new();
            for e in &entries {
                t.push_str(&format!(
                    "{}: {} {}x{}x{} @ {}x{}x{} mm, origin ({}, {}, {}), {}-endian{}, sform {}, qform {}, scl {}:{}\n",
                    e.path,
                    e.datatype,
                    e.dims[0],
                    e.dims[1],
                    e.dims[2],
                    e.spacing_mm[0],
                    e.spacing_mm[1],
                    e.spacing_mm[2],
                    e.origin_mm[0],
                    e.origin_mm[1],
                    e.origin_mm[2],
                    if e.big_endian { "big" } else { "little" },
                    if e.gzipped { ", gzip" } else { "" },
                    e.sform_code,
                    e.qform_code,
                    e.scl_slope,
                    e.scl_inter,
                ));
            }
            t
        }
    };
    report::write_text(&text, out)
}
