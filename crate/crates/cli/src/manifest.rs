//! Case discovery from a CSV manifest or a dataset directory tree.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::SuffixMap;
use crate::{io_error, RunError};

/// One case and the files known for it. CSV manifests never carry modality
/// images; directory scanning fills them in when present.
#[derive(Debug, Clone)]
pub struct CaseEntry {
    pub case_id: String,
    pub gt: Option<PathBuf>,
    pub preds: Vec<PathBuf>,
    pub prob: Option<PathBuf>,
    /// Modality images as (suffix, path), in configured suffix order.
    pub images: Vec<(String, PathBuf)>,
}

#[derive(Debug, Clone)]
pub struct CaseManifest {
    /// Cases ordered lexicographically by id.
    pub cases: Vec<CaseEntry>,
}

/// Load a manifest from a CSV file (header `case_id,gt,pred,prob`, multiple
/// predictions separated by semicolons, paths relative to the manifest) or
/// by scanning a directory whose children are case directories.
pub fn load_manifest(path: &Path, suffixes: &SuffixMap) -> Result<CaseManifest, RunError> {
    let meta =
        fs::metadata(path).map_err(|e| io_error(format!("{}: {e}", path.display())))?;
    let mut cases = if meta.is_dir() {
        scan_directory(path, suffixes)?
    } else {
        parse_csv(path)?
    };
    cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    if cases.is_empty() {
        return Err(io_error(format!(
            "{}: manifest contains no cases",
            path.display()
        )));
    }
    Ok(CaseManifest { cases })
}

const CSV_COLUMNS: [&str; 4] = ["case_id", "gt", "pred", "prob"];

fn parse_csv(path: &Path) -> Result<Vec<CaseEntry>, RunError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_error(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| io_error(format!("{}: {e}", path.display())))?;
    if headers.iter().collect::<Vec<_>>() != CSV_COLUMNS {
        return Err(io_error(format!(
            "{}: manifest header must be `{}`, got `{}`",
            path.display(),
            CSV_COLUMNS.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut seen = BTreeSet::new();
    let mut cases = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Line 1 is the header.
        let line = i + 2;
        let at = |msg: String| io_error(format!("{}: row {line}: {msg}", path.display()));
        let record = record.map_err(|e| at(e.to_string()))?;
        if record.len() != CSV_COLUMNS.len() {
            return Err(at(format!(
                "expected {} fields, got {}",
                CSV_COLUMNS.len(),
                record.len()
            )));
        }
        let case_id = record[0].to_string();
        if case_id.is_empty() {
            return Err(at("case_id is empty".to_string()));
        }
        if !seen.insert(case_id.clone()) {
            return Err(at(format!("duplicate case_id {case_id:?}")));
        }
        let gt = match &record[1] {
            "" => None,
            p => Some(resolve(base, p, line, path)?),
        };
        let mut preds = Vec::new();
        for p in record[2].split(';').map(str::trim).filter(|p| !p.is_empty()) {
            preds.push(resolve(base, p, line, path)?);
        }
        if preds.is_empty() {
            return Err(at("pred lists no files".to_string()));
        }
        let prob = match &record[3] {
            "" => None,
            p => Some(resolve(base, p, line, path)?),
        };
        cases.push(CaseEntry {
            case_id,
            gt,
            preds,
            prob,
            images: Vec::new(),
        });
    }
    Ok(cases)
}

fn resolve(base: &Path, raw: &str, line: usize, manifest: &Path) -> Result<PathBuf, RunError> {
    let p = PathBuf::from(raw);
    let p = if p.is_relative() { base.join(p) } else { p };
    if !p.is_file() {
        return Err(io_error(format!(
            "{}: row {line}: referenced file {} does not exist",
            manifest.display(),
            p.display()
        )));
    }
    Ok(p)
}

fn is_nifti_name(name: &str) -> bool {
    name.ends_with(".nii") || name.ends_with(".nii.gz")
}

fn scan_directory(root: &Path, suffixes: &SuffixMap) -> Result<Vec<CaseEntry>, RunError> {
    let entries =
        fs::read_dir(root).map_err(|e| io_error(format!("{}: {e}", root.display())))?;
    let mut cases = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| io_error(format!("{}: {e}", root.display())))?;
        let file_type = entry
            .file_type()
            .map_err(|e| io_error(format!("{}: {e}", entry.path().display())))?;
        if !file_type.is_dir() {
            continue;
        }
        let case_id = entry.file_name().to_string_lossy().to_string();
        if let Some(case) = scan_case(&entry.path(), &case_id, suffixes)? {
            cases.push(case);
        } else {
            log::debug!("skipping {}: no recognized files", entry.path().display());
        }
    }
    Ok(cases)
}

fn scan_case(
    dir: &Path,
    case_id: &str,
    suffixes: &SuffixMap,
) -> Result<Option<CaseEntry>, RunError> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| io_error(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.file_name().to_string_lossy().to_string())
        .filter(|n| is_nifti_name(n))
        .collect();
    names.sort();

    let exact = |base: &str| -> Option<PathBuf> {
        for ext in [".nii.gz", ".nii"] {
            let candidate = format!("{base}{ext}");
            if names.iter().any(|n| n == &candidate) {
                return Some(dir.join(candidate));
            }
        }
        None
    };
    let with_prefix = |prefix: &str| -> Vec<PathBuf> {
        names
            .iter()
            .filter(|n| n.starts_with(prefix))
            .map(|n| dir.join(n))
            .collect()
    };

    let gt = exact(&format!("{case_id}{}", suffixes.seg));
    let preds = with_prefix(&format!("{case_id}{}", suffixes.pred));
    let probs = with_prefix(&format!("{case_id}{}", suffixes.prob));
    if probs.len() > 1 {
        return Err(io_error(format!(
            "{}: several probability maps match {}{}*",
            dir.display(),
            case_id,
            suffixes.prob
        )));
    }
    let mut images = Vec::new();
    for suffix in &suffixes.images {
        if let Some(p) = exact(&format!("{case_id}{suffix}")) {
            images.push((suffix.clone(), p));
        }
    }

    if gt.is_none() && preds.is_empty() && probs.is_empty() && images.is_empty() {
        return Ok(None);
    }
    Ok(Some(CaseEntry {
        case_id: case_id.to_string(),
        gt,
        preds,
        prob: probs.into_iter().next(),
        images,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs::File;

    fn touch(path: &Path) {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).unwrap();
        }
        File::create(path).unwrap();
    }

    #[test]
    fn csv_rows_resolve_relative_paths_and_sort_by_case_id() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b-gt.nii", "b-p.nii", "a-gt.nii", "a-p1.nii", "a-p2.nii", "a-prob.nii"] {
            touch(&dir.path().join(name));
        }
        let manifest = dir.path().join("cases.csv");
        fs::write(
            &manifest,
            "case_id,gt,pred,prob\n\
             b,b-gt.nii,b-p.nii,\n\
             a,a-gt.nii,a-p1.nii;a-p2.nii,a-prob.nii\n",
        )
        .unwrap();

        let m = load_manifest(&manifest, &SuffixMap::default()).unwrap();
        assert_eq!(m.cases.len(), 2);
        assert_eq!(m.cases[0].case_id, "a");
        assert_eq!(m.cases[1].case_id, "b");
        assert_eq!(m.cases[0].preds.len(), 2);
        assert_eq!(m.cases[0].preds[0], dir.path().join("a-p1.nii"));
        assert!(m.cases[0].prob.is_some());
        assert!(m.cases[1].prob.is_none());
    }

    #[test]
    fn missing_referenced_files_name_the_row() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("a-gt.nii"));
        let manifest = dir.path().join("cases.csv");
        fs::write(
            &manifest,
            "case_id,gt,pred,prob\na,a-gt.nii,nowhere.nii,\n",
        )
        .unwrap();
        let err = load_manifest(&manifest, &SuffixMap::default()).unwrap_err();
        assert!(err.message().contains("row 2"), "{}", err.message());
        assert!(err.message().contains("nowhere.nii"), "{}", err.message());
    }

    #[test]
    fn duplicate_case_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("p.nii"));
        let manifest = dir.path().join("cases.csv");
        fs::write(
            &manifest,
            "case_id,gt,pred,prob\nx,,p.nii,\nx,,p.nii,\n",
        )
        .unwrap();
        let err = load_manifest(&manifest, &SuffixMap::default()).unwrap_err();
        assert!(err.message().contains("duplicate"), "{}", err.message());
    }

    #[test]
    fn header_and_pred_column_are_mandatory() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("cases.csv");

        fs::write(&manifest, "id,gt,pred,prob\n").unwrap();
        let err = load_manifest(&manifest, &SuffixMap::default()).unwrap_err();
        assert!(err.message().contains("header"), "{}", err.message());

        touch(&dir.path().join("a-gt.nii"));
        fs::write(&manifest, "case_id,gt,pred,prob\na,a-gt.nii,,\n").unwrap();
        let err = load_manifest(&manifest, &SuffixMap::default()).unwrap_err();
        assert!(err.message().contains("pred"), "{}", err.message());
    }

    #[test]
    fn header_only_manifests_are_empty() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("cases.csv");
        fs::write(&manifest, "case_id,gt,pred,prob\n").unwrap();
        let err = load_manifest(&manifest, &SuffixMap::default()).unwrap_err();
        assert!(err.message().contains("no cases"), "{}", err.message());
    }

    #[test]
    fn directory_scan_discovers_cases_by_convention() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("BraTS-GLI-00190-000");
        for name in [
            "BraTS-GLI-00190-000-seg.nii.gz",
            "BraTS-GLI-00190-000-pred-one.nii.gz",
            "BraTS-GLI-00190-000-pred-two.nii.gz",
            "BraTS-GLI-00190-000-prob.nii.gz",
            "BraTS-GLI-00190-000-t1c.nii.gz",
            "BraTS-GLI-00190-000-t2w.nii.gz",
        ] {
            touch(&a.join(name));
        }
        let b = dir.path().join("BraTS-GLI-00001-000");
        touch(&b.join("BraTS-GLI-00001-000-pred.nii.gz"));
        touch(&b.join("notes.txt"));
        fs::create_dir_all(dir.path().join("leftovers")).unwrap();
        touch(&dir.path().join("stray.nii.gz"));

        let m = load_manifest(dir.path(), &SuffixMap::default()).unwrap();
        assert_eq!(m.cases.len(), 2);

        let b = &m.cases[0];
        assert_eq!(b.case_id, "BraTS-GLI-00001-000");
        assert!(b.gt.is_none());
        assert_eq!(b.preds.len(), 1);

        let a = &m.cases[1];
        assert_eq!(a.case_id, "BraTS-GLI-00190-000");
        assert!(a.gt.is_some());
        assert_eq!(a.preds.len(), 2);
        assert!(a.preds[0].to_string_lossy().contains("pred-one"));
        assert!(a.prob.is_some());
        let suffixes: Vec<&str> = a.images.iter().map(|(s, _)| s.as_str()).collect();
        assert_eq!(suffixes, ["-t1c", "-t2w"]);
    }

    #[test]
    fn several_probability_maps_for_one_case_are_ambiguous() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("case");
        touch(&a.join("case-pred.nii.gz"));
        touch(&a.join("case-prob.nii.gz"));
        touch(&a.join("case-prob-alt.nii.gz"));
        let err = load_manifest(dir.path(), &SuffixMap::default()).unwrap_err();
        assert!(err.message().contains("probability"), "{}", err.message());
    }
}
