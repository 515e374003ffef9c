//! Voxel grids, label schemas and the typed volumes the rest of the crate
//! operates on.
//!
//! Voxel data is stored in a flat `Vec` in x-fastest order: the voxel at
//! `(x, y, z)` lives at `x + nx * (y + ny * z)`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used when deciding whether two volumes share a grid.
pub const GEOMETRY_TOLERANCE: f64 = 1e-4;

const DIRECTION_ORTHO_TOLERANCE: f64 = 1e-6;

/// Physical placement of a voxel grid: dimensions, spacing in mm, world
/// origin of the first voxel center, and a 3x3 direction matrix whose
/// column `c` is the world direction of voxel axis `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGeometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub direction: [[f64; 3]; 3],
}

impl ImageGeometry {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        direction: [[f64; 3]; 3],
    ) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidGeometry(format!(
                "dims must be positive, got {dims:?}"
            )));
        }
        if spacing.iter().any(|&s| !s.is_finite() || s <= 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGeometry("origin must be finite".into()));
        }
        for c in 0..3 {
            let col = [direction[0][c], direction[1][c], direction[2][c]];
            let norm = (col[0] * col[0] + col[1] * col[1] + col[2] * col[2]).sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > DIRECTION_ORTHO_TOLERANCE {
                return Err(Error::InvalidGeometry(format!(
                    "direction column {c} is not unit length (norm {norm})"
                )));
            }
            for c2 in (c + 1)..3 {
                let dot = direction[0][c] * direction[0][c2]
                    + direction[1][c] * direction[1][c2]
                    + direction[2][c] * direction[2][c2];
                if dot.abs() > DIRECTION_ORTHO_TOLERANCE {
                    return Err(Error::InvalidGeometry(format!(
                        "direction columns {c} and {c2} are not orthogonal (dot {dot})"
                    )));
                }
            }
        }
        Ok(ImageGeometry {
            dims,
            spacing,
            origin,
            direction,
        })
    }

    /// Axis-aligned geometry with identity direction and zero origin.
    pub fn axis_aligned(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::new(dims, spacing, [0.0; 3], IDENTITY_DIRECTION)
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Flat index of voxel `(x, y, z)`, x fastest.
    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    /// Volume of one voxel in cubic millimeters.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    /// World coordinates of a (possibly fractional) voxel index.
    pub fn world_from_index(&self, idx: [f64; 3]) -> [f64; 3] {
        let mut w = self.origin;
        for r in 0..3 {
            for c in 0..3 {
                w[r] += self.direction[r][c] * self.spacing[c] * idx[c];
            }
        }
        w
    }

    /// Whether two grids are close enough to treat voxels as corresponding:
    /// identical dims, and spacing/origin/direction within an absolute
    /// tolerance of 1e-4.
    pub fn approx_eq(&self, other: &ImageGeometry) -> bool {
        if self.dims != other.dims {
            return false;
        }
        let close = |a: f64, b: f64| (a - b).abs() <= GEOMETRY_TOLERANCE;
        for a in 0..3 {
            if !close(self.spacing[a], other.spacing[a]) || !close(self.origin[a], other.origin[a])
            {
                return false;
            }
            for b in 0..3 {
                if !close(self.direction[a][b], other.direction[a][b]) {
                    return false;
                }
            }
        }
        true
    }

    pub fn ensure_compatible(&self, other: &ImageGeometry, context: &str) -> Result<()> {
        if self.approx_eq(other) {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "{context}: {:?}/{:?} vs {:?}/{:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )))
        }
    }
}

pub const IDENTITY_DIRECTION: [[f64; 3]; 3] =
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Real-valued image on a voxel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageVolume {
    pub geometry: ImageGeometry,
    pub voxels: Vec<f64>,
}

impl ImageVolume {
    pub fn new(geometry: ImageGeometry, voxels: Vec<f64>) -> Result<Self> {
        check_len(&geometry, voxels.len())?;
        Ok(ImageVolume { geometry, voxels })
    }
}

/// Integer labelmap on a voxel grid. Label semantics live in [`LabelSchema`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    pub geometry: ImageGeometry,
    pub voxels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(geometry: ImageGeometry, voxels: Vec<u8>) -> Result<Self> {
        check_len(&geometry, voxels.len())?;
        Ok(LabelVolume { geometry, voxels })
    }

    /// Errors if any voxel carries a label the schema does not define.
    pub fn validate_against(&self, schema: &LabelSchema) -> Result<()> {
        for &v in &self.voxels {
            if v != 0 && !schema.has_label_value(v) {
                return Err(Error::LabelOutsideSchema { label: v });
            }
        }
        Ok(())
    }
}

/// Per-voxel probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    pub geometry: ImageGeometry,
    pub voxels: Vec<f64>,
}

impl ProbabilityVolume {
    pub fn new(geometry: ImageGeometry, voxels: Vec<f64>) -> Result<Self> {
        check_len(&geometry, voxels.len())?;
        if let Some(v) = voxels
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::InvalidParameter(format!(
                "probability value {v} outside [0, 1]"
            )));
        }
        Ok(ProbabilityVolume { geometry, voxels })
    }
}

/// Boolean mask on a voxel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub geometry: ImageGeometry,
    pub voxels: Vec<bool>,
}

impl BinaryMask {
    pub fn new(geometry: ImageGeometry, voxels: Vec<bool>) -> Result<Self> {
        check_len(&geometry, voxels.len())?;
        Ok(BinaryMask { geometry, voxels })
    }

    pub fn empty(geometry: ImageGeometry) -> Self {
        let n = geometry.voxel_count();
        BinaryMask {
            geometry,
            voxels: vec![false; n],
        }
    }

    /// Number of set voxels.
    pub fn count_true(&self) -> usize {
        self.voxels.iter().filter(|v| **v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.voxels.iter().any(|v| *v)
    }
}

fn check_len(geometry: &ImageGeometry, len: usize) -> Result<()> {
    if geometry.voxel_count() == len {
        Ok(())
    } else {
        Err(Error::InvalidGeometry(format!(
            "voxel buffer has {len} elements but dims {:?} require {}",
            geometry.dims,
            geometry.voxel_count()
        )))
    }
}

/// Names for label values and for the label sets ("regions") metrics are
/// computed over.
///
/// The default is the adult glioma convention: labels NCR=1, ED=2, ET=3 and
/// the nested regions ET = {3}, TC = {1, 3}, WT = {1, 2, 3}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLabelSchema")]
pub struct LabelSchema {
    labels: BTreeMap<String, u8>,
    regions: BTreeMap<String, BTreeSet<u8>>,
}

/// Deserialization image of [`LabelSchema`]; conversion runs the same
/// validation as [`LabelSchema::new`].
#[derive(Deserialize)]
struct RawLabelSchema {
    labels: BTreeMap<String, u8>,
    regions: BTreeMap<String, BTreeSet<u8>>,
}

impl TryFrom<RawLabelSchema> for LabelSchema {
    type Error = Error;

    fn try_from(raw: RawLabelSchema) -> Result<Self> {
        LabelSchema::new(raw.labels, raw.regions)
    }
}

impl LabelSchema {
    pub fn new(
        labels: BTreeMap<String, u8>,
        regions: BTreeMap<String, BTreeSet<u8>>,
    ) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (name, &value) in &labels {
            if value == 0 {
                return Err(Error::InvalidSchema(format!(
                    "label {name:?} uses reserved background value 0"
                )));
            }
            if !seen.insert(value) {
                return Err(Error::InvalidSchema(format!(
                    "label value {value} assigned to more than one name"
                )));
            }
        }
        for (region, members) in &regions {
            if members.is_empty() {
                return Err(Error::InvalidSchema(format!("region {region:?} is empty")));
            }
            for v in members {
                if !seen.contains(v) {
                    return Err(Error::InvalidSchema(format!(
                        "region {region:?} references undefined label value {v}"
                    )));
                }
            }
        }
        // The three standard tumor regions must nest when all are present.
        if let (Some(et), Some(tc), Some(wt)) =
            (regions.get("ET"), regions.get("TC"), regions.get("WT"))
        {
            if !et.is_subset(tc) || !tc.is_subset(wt) {
                return Err(Error::InvalidSchema(
                    "regions must nest: ET within TC within WT".into(),
                ));
            }
        }
        Ok(LabelSchema { labels, regions })
    }

    /// NCR=1, ED=2, ET=3 with regions ET, TC, WT.
    pub fn brats() -> Self {
        let labels = BTreeMap::from([
            ("NCR".to_string(), 1u8),
            ("ED".to_string(), 2u8),
            ("ET".to_string(), 3u8),
        ]);
        let regions = BTreeMap::from([
            ("ET".to_string(), BTreeSet::from([3u8])),
            ("TC".to_string(), BTreeSet::from([1u8, 3u8])),
            ("WT".to_string(), BTreeSet::from([1u8, 2u8, 3u8])),
        ]);
        LabelSchema::new(labels, regions).expect("builtin schema is valid")
    }

    pub fn label_value(&self, name: &str) -> Result<u8> {
        self.labels
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownLabelName(name.to_string()))
    }

    pub fn has_label_value(&self, value: u8) -> bool {
        self.labels.values().any(|&v| v == value)
    }

    pub fn labels(&self) -> &BTreeMap<String, u8> {
        &self.labels
    }

    pub fn region(&self, name: &str) -> Result<&BTreeSet<u8>> {
        self.regions
            .get(name)
            .ok_or_else(|| Error::UnknownRegion(name.to_string()))
    }

    pub fn regions(&self) -> &BTreeMap<String, BTreeSet<u8>> {
        &self.regions
    }

    /// Region names in reporting order: ET, TC, WT first, any custom
    /// regions after them alphabetically.
    pub fn region_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        for preferred in ["ET", "TC", "WT"] {
            if self.regions.contains_key(preferred) {
                names.push(
                    self.regions
                        .get_key_value(preferred)
                        .map(|(k, _)| k.as_str())
                        .unwrap(),
                );
            }
        }
        for name in self.regions.keys() {
            if !matches!(name.as_str(), "ET" | "TC" | "WT") {
                names.push(name.as_str());
            }
        }
        names
    }
}

impl Default for LabelSchema {
    fn default() -> Self {
        LabelSchema::brats()
    }
}

/// Mask of the voxels whose label belongs to the named region.
pub fn region_mask(volume: &LabelVolume, schema: &LabelSchema, region: &str) -> Result<BinaryMask> {
    let members = schema.region(region)?;
    let voxels = volume.voxels.iter().map(|v| members.contains(v)).collect();
    BinaryMask::new(volume.geometry.clone(), voxels)
}
