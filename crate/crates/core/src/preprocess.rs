//! Geometric preprocessing: canonical reorientation, isotropic
//! resampling, brain-extent cropping, fixed field-of-view resizing and
//! z-score intensity normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{
    BinaryMask, ImageGeometry, ImageVolume, LabelVolume, IDENTITY_DIRECTION,
};

/// Interpolation used by resampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interp {
    Linear,
    Nearest,
}

const AXIS_ALIGN_TOLERANCE: f64 = 1e-3;

/// How each output axis of a reorientation maps onto a source axis.
struct AxisMap {
    // source voxel axis feeding world axis r
    source_axis: [usize; 3],
    // whether that source axis runs against the world axis
    flip: [bool; 3],
}

fn canonical_axis_map(geometry: &ImageGeometry) -> Result<AxisMap> {
    let mut source_axis = [usize::MAX; 3];
    let mut flip = [false; 3];
    for c in 0..3 {
        let col = [
            geometry.direction[0][c],
            geometry.direction[1][c],
            geometry.direction[2][c],
        ];
        let mut matched = false;
        for r in 0..3 {
            for sign in [1.0, -1.0] {
                let mut target = [0.0; 3];
                target[r] = sign;
                let dev = col
                    .iter()
                    .zip(&target)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                if dev <= AXIS_ALIGN_TOLERANCE {
                    if source_axis[r] != usize::MAX {
                        return Err(Error::ObliqueOrientation);
                    }
                    source_axis[r] = c;
                    flip[r] = sign < 0.0;
                    matched = true;
                }
            }
        }
        if !matched {
            return Err(Error::ObliqueOrientation);
        }
    }
    if source_axis.contains(&usize::MAX) {
        return Err(Error::ObliqueOrientation);
    }
    Ok(AxisMap { source_axis, flip })
}

fn reorient_data<T: Copy>(
    geometry: &ImageGeometry,
    voxels: &[T],
) -> Result<(ImageGeometry, Vec<T>)> {
    let map = canonical_axis_map(geometry)?;
    let src_dims = geometry.dims;
    let mut dims = [0usize; 3];
    let mut spacing = [0.0f64; 3];
    for r in 0..3 {
        dims[r] = src_dims[map.source_axis[r]];
        spacing[r] = geometry.spacing[map.source_axis[r]];
    }

    // World position of the output (0,0,0) voxel, computed with the
    // original direction so voxel positions carry over unchanged.
    let mut first = [0.0f64; 3];
    for r in 0..3 {
        if map.flip[r] {
            first[map.source_axis[r]] = (src_dims[map.source_axis[r]] - 1) as f64;
        }
    }
    let origin = geometry.world_from_index(first);

    let out_geometry = ImageGeometry::new(dims, spacing, origin, IDENTITY_DIRECTION)?;
    let mut out = Vec::with_capacity(voxels.len());
    let mut src = [0usize; 3];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let u = [x, y, z];
                for r in 0..3 {
                    let a = map.source_axis[r];
                    src[a] = if map.flip[r] {
                        src_dims[a] - 1 - u[r]
                    } else {
                        u[r]
                    };
                }
                out.push(voxels[src[0] + src_dims[0] * (src[1] + src_dims[1] * src[2])]);
            }
        }
    }
    Ok((out_geometry, out))
}

/// Permute and flip voxel axes so the direction matrix becomes identity
/// (x grows rightward, y forward, z upward). Errors when any voxel axis is
/// more than 1e-3 away from a signed world axis.
pub fn reorient_to_canonical(volume: &ImageVolume) -> Result<ImageVolume> {
    let (geometry, voxels) = reorient_data(&volume.geometry, &volume.voxels)?;
    ImageVolume::new(geometry, voxels)
}

/// [`reorient_to_canonical`] for label maps.
pub fn reorient_labels(volume: &LabelVolume) -> Result<LabelVolume> {
    let (geometry, voxels) = reorient_data(&volume.geometry, &volume.voxels)?;
    LabelVolume::new(geometry, voxels)
}

fn resampled_geometry(geometry: &ImageGeometry, target: [f64; 3]) -> Result<ImageGeometry> {
    if target.iter().any(|&t| !t.is_finite() || t <= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "target spacing must be positive, got {target:?}"
        )));
    }
    let mut dims = [0usize; 3];
    for a in 0..3 {
        let extent = geometry.dims[a] as f64 * geometry.spacing[a];
        dims[a] = (extent / target[a]).ceil() as usize;
        if dims[a] == 0 {
            dims[a] = 1;
        }
    }
    ImageGeometry::new(dims, target, geometry.origin, geometry.direction)
}

/// Resample onto a grid with the given spacing. The output covers the
/// source extent: `ceil(dim * spacing / target)` voxels per axis, sharing
/// origin and direction with the source. Sampling happens at voxel
/// centers; samples outside the source grid read as 0.
pub fn resample_isotropic(
    volume: &ImageVolume,
    target: [f64; 3],
    interp: Interp,
) -> Result<ImageVolume> {
    let geometry = resampled_geometry(&volume.geometry, target)?;
    let src = &volume.geometry;
    let [nx, ny, nz] = geometry.dims;
    // Output voxel u sits at source index u * target / spacing along each
    // axis because origin and direction are shared.
    let scale = [
        target[0] / src.spacing[0],
        target[1] / src.spacing[1],
        target[2] / src.spacing[2],
    ];
    let mut out = Vec::with_capacity(geometry.voxel_count());
    match interp {
        Interp::Nearest => {
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let c = [
                            x as f64 * scale[0],
                            y as f64 * scale[1],
                            z as f64 * scale[2],
                        ];
                        out.push(sample_nearest(src, &volume.voxels, c).unwrap_or(0.0));
                    }
                }
            }
        }
        Interp::Linear => {
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let c = [
                            x as f64 * scale[0],
                            y as f64 * scale[1],
                            z as f64 * scale[2],
                        ];
                        out.push(sample_trilinear(src, &volume.voxels, c));
                    }
                }
            }
        }
    }
    ImageVolume::new(geometry, out)
}

/// Resample a label map. Only nearest-neighbor interpolation is allowed.
pub fn resample_labels(
    volume: &LabelVolume,
    target: [f64; 3],
    interp: Interp,
) -> Result<LabelVolume> {
    if interp != Interp::Nearest {
        return Err(Error::LabelInterpolation);
    }
    let geometry = resampled_geometry(&volume.geometry, target)?;
    let src = &volume.geometry;
    let [nx, ny, nz] = geometry.dims;
    let scale = [
        target[0] / src.spacing[0],
        target[1] / src.spacing[1],
        target[2] / src.spacing[2],
    ];
    let mut out = Vec::with_capacity(geometry.voxel_count());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let c = [
                    x as f64 * scale[0],
                    y as f64 * scale[1],
                    z as f64 * scale[2],
                ];
                out.push(nearest_index(src, c).map_or(0, |i| volume.voxels[i]));
            }
        }
    }
    LabelVolume::new(geometry, out)
}

/// Nearest source voxel of a fractional index, or None when it falls
/// outside the grid. Half-way coordinates round toward the lower index.
fn nearest_index(geometry: &ImageGeometry, c: [f64; 3]) -> Option<usize> {
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let r = (c[a] - 0.5).ceil();
        if r < 0.0 || r >= geometry.dims[a] as f64 {
            return None;
        }
        idx[a] = r as usize;
    }
    Some(geometry.index(idx[0], idx[1], idx[2]))
}

fn sample_nearest(geometry: &ImageGeometry, voxels: &[f64], c: [f64; 3]) -> Option<f64> {
    nearest_index(geometry, c).map(|i| voxels[i])
}

fn sample_trilinear(geometry: &ImageGeometry, voxels: &[f64], c: [f64; 3]) -> f64 {
    let dims = geometry.dims;
    let mut lo = [0i64; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let f = c[a].floor();
        lo[a] = f as i64;
        frac[a] = c[a] - f;
    }
    let mut acc = 0.0;
    for dz in 0..2i64 {
        for dy in 0..2i64 {
            for dx in 0..2i64 {
                let p = [lo[0] + dx, lo[1] + dy, lo[2] + dz];
                let w = (if dx == 1 { frac[0] } else { 1.0 - frac[0] })
                    * (if dy == 1 { frac[1] } else { 1.0 - frac[1] })
                    * (if dz == 1 { frac[2] } else { 1.0 - frac[2] });
                if w == 0.0 {
                    continue;
                }
                let inside = (0..3).all(|a| p[a] >= 0 && p[a] < dims[a] as i64);
                if inside {
                    acc += w
                        * voxels[p[0] as usize
                            + dims[0] * (p[1] as usize + dims[1] * p[2] as usize)];
                }
            }
        }
    }
    acc
}

/// Inclusive voxel-index box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl CropBox {
    pub fn dims(&self) -> [usize; 3] {
        [
            self.max[0] - self.min[0] + 1,
            self.max[1] - self.min[1] + 1,
            self.max[2] - self.min[2] + 1,
        ]
    }
}

/// Tightest box containing every voxel that is nonzero in any input
/// volume. All inputs must share a grid. Returns the full grid when all
/// volumes are identically zero.
pub fn crop_to_brain(volumes: &[&ImageVolume]) -> Result<CropBox> {
    let first = volumes
        .first()
        .ok_or_else(|| Error::InvalidParameter("crop_to_brain needs at least one volume".into()))?;
    for v in &volumes[1..] {
        first
            .geometry
            .ensure_compatible(&v.geometry, "crop_to_brain inputs")?;
    }
    let dims = first.geometry.dims;
    let mut min = [usize::MAX; 3];
    let mut max = [0usize; 3];
    let mut any = false;
    let mut idx = 0usize;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let nonzero = volumes.iter().any(|v| v.voxels[idx] != 0.0);
                if nonzero {
                    any = true;
                    let p = [x, y, z];
                    for a in 0..3 {
                        min[a] = min[a].min(p[a]);
                        max[a] = max[a].max(p[a]);
                    }
                }
                idx += 1;
            }
        }
    }
    if !any {
        return Ok(CropBox {
            min: [0, 0, 0],
            max: [dims[0] - 1, dims[1] - 1, dims[2] - 1],
        });
    }
    Ok(CropBox { min, max })
}

fn crop_data<T: Copy>(
    geometry: &ImageGeometry,
    voxels: &[T],
    cropbox: &CropBox,
) -> Result<(ImageGeometry, Vec<T>)> {
    for a in 0..3 {
        if cropbox.min[a] > cropbox.max[a] || cropbox.max[a] >= geometry.dims[a] {
            return Err(Error::InvalidParameter(format!(
                "crop box {cropbox:?} does not fit dims {:?}",
                geometry.dims
            )));
        }
    }
    let dims = cropbox.dims();
    let origin = geometry.world_from_index([
        cropbox.min[0] as f64,
        cropbox.min[1] as f64,
        cropbox.min[2] as f64,
    ]);
    let out_geometry =
        ImageGeometry::new(dims, geometry.spacing, origin, geometry.direction)?;
    let mut out = Vec::with_capacity(out_geometry.voxel_count());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                out.push(
                    voxels[geometry.index(
                        x + cropbox.min[0],
                        y + cropbox.min[1],
                        z + cropbox.min[2],
                    )],
                );
            }
        }
    }
    Ok((out_geometry, out))
}

/// Extract the voxels inside an inclusive box, updating the origin so the
/// kept voxels stay at their world positions.
pub fn apply_crop(volume: &ImageVolume, cropbox: &CropBox) -> Result<ImageVolume> {
    let (geometry, voxels) = crop_data(&volume.geometry, &volume.voxels, cropbox)?;
    ImageVolume::new(geometry, voxels)
}

/// [`apply_crop`] for label maps.
pub fn apply_crop_labels(volume: &LabelVolume, cropbox: &CropBox) -> Result<LabelVolume> {
    let (geometry, voxels) = crop_data(&volume.geometry, &volume.voxels, cropbox)?;
    LabelVolume::new(geometry, voxels)
}

fn resize_data<T: Copy + Default>(
    geometry: &ImageGeometry,
    voxels: &[T],
    fov: [usize; 3],
) -> Result<(ImageGeometry, Vec<T>)> {
    if fov.contains(&0) {
        return Err(Error::InvalidParameter(format!(
            "field of view must be positive, got {fov:?}"
        )));
    }
    // Per axis the output starts at source index lo[a] (negative when
    // padding). Truncating division keeps the odd leftover voxel on the
    // high side for both crops and pads.
    let src_dims = geometry.dims;
    let mut lo = [0i64; 3];
    for a in 0..3 {
        let diff = src_dims[a] as i64 - fov[a] as i64;
        lo[a] = diff / 2;
    }
    let origin =
        geometry.world_from_index([lo[0] as f64, lo[1] as f64, lo[2] as f64]);
    let out_geometry = ImageGeometry::new(fov, geometry.spacing, origin, geometry.direction)?;
    let mut out = Vec::with_capacity(out_geometry.voxel_count());
    for z in 0..fov[2] {
        for y in 0..fov[1] {
            for x in 0..fov[0] {
                let p = [
                    x as i64 + lo[0],
                    y as i64 + lo[1],
                    z as i64 + lo[2],
                ];
                let inside = (0..3).all(|a| p[a] >= 0 && p[a] < src_dims[a] as i64);
                out.push(if inside {
                    voxels[p[0] as usize
                        + src_dims[0] * (p[1] as usize + src_dims[1] * p[2] as usize)]
                } else {
                    T::default()
                });
            }
        }
    }
    Ok((out_geometry, out))
}

/// Center-crop or symmetrically zero-pad each axis to the requested size.
/// Odd crop or pad amounts place the extra voxel on the high-index side.
/// The origin moves so retained voxels keep their world positions.
pub fn resize_fov(volume: &ImageVolume, fov: [usize; 3]) -> Result<ImageVolume> {
    let (geometry, voxels) = resize_data(&volume.geometry, &volume.voxels, fov)?;
    ImageVolume::new(geometry, voxels)
}

/// [`resize_fov`] for label maps.
pub fn resize_fov_labels(volume: &LabelVolume, fov: [usize; 3]) -> Result<LabelVolume> {
    let (geometry, voxels) = resize_data(&volume.geometry, &volume.voxels, fov)?;
    LabelVolume::new(geometry, voxels)
}

const MIN_STD: f64 = 1e-8;

/// Z-score normalize over the mask domain (default: nonzero voxels),
/// using the population standard deviation. Voxels outside the domain are
/// set to 0. Errors when the domain is empty or its standard deviation
/// falls below 1e-8.
pub fn zscore_normalize(volume: &ImageVolume, mask: Option<&BinaryMask>) -> Result<ImageVolume> {
    if let Some(m) = mask {
        volume
            .geometry
            .ensure_compatible(&m.geometry, "zscore_normalize mask")?;
    }
    let in_domain = |i: usize| -> bool {
        match mask {
            Some(m) => m.voxels[i],
            None => volume.voxels[i] != 0.0,
        }
    };
    let mut count = 0usize;
    let mut sum = 0.0f64;
    for (i, v) in volume.voxels.iter().enumerate() {
        if in_domain(i) {
            count += 1;
            sum += v;
        }
    }
    if count == 0 {
        return Err(Error::EmptyNormalizationDomain);
    }
    let mean = sum / count as f64;
    let mut ss = 0.0f64;
    for (i, v) in volume.voxels.iter().enumerate() {
        if in_domain(i) {
            let d = v - mean;
            ss += d * d;
        }
    }
    let std = (ss / count as f64).sqrt();
    if std < MIN_STD {
        return Err(Error::ConstantImage { std });
    }
    let voxels = volume
        .voxels
        .iter()
        .enumerate()
        .map(|(i, v)| if in_domain(i) { (v - mean) / std } else { 0.0 })
        .collect();
    ImageVolume::new(volume.geometry.clone(), voxels)
}

/// Settings for [`preprocess_case`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessPlan {
    pub target_spacing: [f64; 3],
    pub fov: [usize; 3],
    pub reorient: bool,
    pub resample: bool,
    pub crop: bool,
    pub resize: bool,
    pub normalize: bool,
}

impl Default for PreprocessPlan {
    fn default() -> Self {
        PreprocessPlan {
            target_spacing: [1.0, 1.0, 1.0],
            fov: [192, 224, 160],
            reorient: true,
            resample: true,
            crop: true,
            resize: true,
            normalize: true,
        }
    }
}

/// What [`preprocess_case`] actually did, including the crop box needed to
/// map results back onto the uncropped grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessRecord {
    pub input_dims: [usize; 3],
    pub input_spacing: [f64; 3],
    pub crop: Option<CropBox>,
    pub output_dims: [usize; 3],
}

/// Run the full preprocessing chain over the images of one case and,
/// optionally, its label map: reorient, resample (images linearly, labels
/// nearest), crop to the joint brain extent of the images, resize to the
/// fixed field of view, then z-score normalize each image over its nonzero
/// voxels.
pub fn preprocess_case(
    images: &[ImageVolume],
    labels: Option<&LabelVolume>,
    plan: &PreprocessPlan,
) -> Result<(Vec<ImageVolume>, Option<LabelVolume>, PreprocessRecord)> {
    if images.is_empty() && labels.is_none() {
        return Err(Error::InvalidParameter(
            "preprocess_case needs at least one image or label volume".into(),
        ));
    }
    let reference = images
        .first()
        .map(|v| v.geometry.clone())
        .or_else(|| labels.map(|l| l.geometry.clone()))
        .unwrap();
    for img in images {
        reference.ensure_compatible(&img.geometry, "preprocess_case images")?;
    }
    if let Some(l) = labels {
        reference.ensure_compatible(&l.geometry, "preprocess_case labels")?;
    }

    let record_input_dims = reference.dims;
    let record_input_spacing = reference.spacing;

    let mut imgs: Vec<ImageVolume> = images.to_vec();
    let mut labs: Option<LabelVolume> = labels.cloned();

    if plan.reorient {
        for img in &mut imgs {
            *img = reorient_to_canonical(img)?;
        }
        if let Some(l) = labs.as_mut() {
            *l = reorient_labels(l)?;
        }
    }
    if plan.resample {
        for img in &mut imgs {
            *img = resample_isotropic(img, plan.target_spacing, Interp::Linear)?;
        }
        if let Some(l) = labs.as_mut() {
            *l = resample_labels(l, plan.target_spacing, Interp::Nearest)?;
        }
    }
    let mut crop = None;
    if plan.crop {
        let cropbox = if imgs.is_empty() {
            // Label-only runs take the extent from the labels instead.
            let l = labs.as_ref().unwrap();
            let as_image = ImageVolume::new(
                l.geometry.clone(),
                l.voxels.iter().map(|&v| v as f64).collect(),
            )?;
            crop_to_brain(&[&as_image])?
        } else {
            let refs: Vec<&ImageVolume> = imgs.iter().collect();
            crop_to_brain(&refs)?
        };
        for img in &mut imgs {
            *img = apply_crop(img, &cropbox)?;
        }
        if let Some(l) = labs.as_mut() {
            *l = apply_crop_labels(l, &cropbox)?;
        }
        crop = Some(cropbox);
    }
    if plan.resize {
        for img in &mut imgs {
            *img = resize_fov(img, plan.fov)?;
        }
        if let Some(l) = labs.as_mut() {
            *l = resize_fov_labels(l, plan.fov)?;
        }
    }
    if plan.normalize {
        for img in &mut imgs {
            *img = zscore_normalize(img, None)?;
        }
    }

    let output_dims = imgs
        .first()
        .map(|v| v.geometry.dims)
        .or_else(|| labs.as_ref().map(|l| l.geometry.dims))
        .unwrap();
    let record = PreprocessRecord {
        input_dims: record_input_dims,
        input_spacing: record_input_spacing,
        crop,
        output_dims,
    };
    Ok((imgs, labs, record))
}
