//! Minimal NIfTI-1 reader and writer.
//!
//! Reads single-file `.nii` / `.nii.gz` volumes with datatypes uint8,
//! int16, int32, float32 and float64, in either byte order. Writes
//! little-endian files with datatypes uint8, int16, int32 and float32,
//! always with a value sform. Geometry is taken from the sform when
//! present, then the qform, then the pixdim diagonal.

use std::fs;
use std::io::Read;
use std::io::Write as IoWrite;
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::{
    ImageGeometry, ImageVolume, LabelSchema, LabelVolume, ProbabilityVolume, IDENTITY_DIRECTION,
};

const HEADER_SIZE: usize = 348;
// Header plus the 4-byte extension flag; voxel data starts here on write.
const DATA_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";
const NIFTI2_HEADER_SIZE: i32 = 540;

/// Voxel storage types this module understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDatatype {
    Uint8,
    Int16,
    Int32,
    Float32,
    /// Read-only; [`write_volume`] rejects it.
    Float64,
}

impl NiftiDatatype {
    pub fn code(self) -> i16 {
        match self {
            NiftiDatatype::Uint8 => 2,
            NiftiDatatype::Int16 => 4,
            NiftiDatatype::Int32 => 8,
            NiftiDatatype::Float32 => 16,
            NiftiDatatype::Float64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(NiftiDatatype::Uint8),
            4 => Ok(NiftiDatatype::Int16),
            8 => Ok(NiftiDatatype::Int32),
            16 => Ok(NiftiDatatype::Float32),
            64 => Ok(NiftiDatatype::Float64),
            code => Err(Error::UnsupportedDatatype { code }),
        }
    }

    pub fn byte_size(self) -> usize {
        match self {
            NiftiDatatype::Uint8 => 1,
            NiftiDatatype::Int16 => 2,
            NiftiDatatype::Int32 | NiftiDatatype::Float32 => 4,
            NiftiDatatype::Float64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NiftiDatatype::Uint8 => "uint8",
            NiftiDatatype::Int16 => "int16",
            NiftiDatatype::Int32 => "int32",
            NiftiDatatype::Float32 => "float32",
            NiftiDatatype::Float64 => "float64",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Endianness {
    Little,
    Big,
}

/// Header facts surfaced for inspection tools.
#[derive(Debug, Clone)]
pub struct FileInfo {
    pub datatype: NiftiDatatype,
    pub dim: [i16; 8],
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub qform_code: i16,
    pub sform_code: i16,
    pub big_endian: bool,
    pub gzipped: bool,
    pub geometry: ImageGeometry,
}

struct RawHeader {
    dim: [i16; 8],
    datatype: i16,
    bitpix: i16,
    pixdim: [f32; 8],
    vox_offset: f32,
    scl_slope: f32,
    scl_inter: f32,
    qform_code: i16,
    sform_code: i16,
    quatern: [f32; 6],
    srow: [[f32; 4]; 3],
    endianness: Endianness,
}

fn read_bytes(path: &Path) -> Result<(Vec<u8>, bool)> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let gzipped = raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b;
    if gzipped || path.extension().is_some_and(|e| e == "gz") {
        if !gzipped {
            return Err(Error::NotNifti { path: path.into() });
        }
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok((out, true))
    } else {
        Ok((raw, false))
    }
}

fn i16_at(buf: &[u8], off: usize, e: Endianness) -> i16 {
    let b = [buf[off], buf[off + 1]];
    match e {
        Endianness::Little => i16::from_le_bytes(b),
        Endianness::Big => i16::from_be_bytes(b),
    }
}

fn i32_at(buf: &[u8], off: usize, e: Endianness) -> i32 {
    let b = [buf[off], buf[off + 1], buf[off + 2], buf[off + 3]];
    match e {
        Endianness::Little => i32::from_le_bytes(b),
        Endianness::Big => i32::from_be_bytes(b),
    }
}

fn f32_at(buf: &[u8], off: usize, e: Endianness) -> f32 {
    let b = [buf[off], buf[off + 1], buf[off + 2], buf[off + 3]];
    match e {
        Endianness::Little => f32::from_le_bytes(b),
        Endianness::Big => f32::from_be_bytes(b),
    }
}

fn parse_header(path: &Path, buf: &[u8]) -> Result<RawHeader> {
    if buf.len() < HEADER_SIZE {
        return Err(Error::NotNifti { path: path.into() });
    }
    // dim[0] must be 1..=7; an out-of-range value means the file was
    // written with the other byte order.
    let endianness = {
        let le = i16_at(buf, 40, Endianness::Little);
        if (1..=7).contains(&le) {
            Endianness::Little
        } else {
            let be = i16_at(buf, 40, Endianness::Big);
            if (1..=7).contains(&be) {
                Endianness::Big
            } else {
                let size_le = i32_at(buf, 0, Endianness::Little);
                let size_be = i32_at(buf, 0, Endianness::Big);
                if size_le == NIFTI2_HEADER_SIZE || size_be == NIFTI2_HEADER_SIZE {
                    return Err(Error::Nifti2Unsupported { path: path.into() });
                }
                return Err(Error::NotNifti { path: path.into() });
            }
        }
    };
    let sizeof_hdr = i32_at(buf, 0, endianness);
    if sizeof_hdr == NIFTI2_HEADER_SIZE {
        return Err(Error::Nifti2Unsupported { path: path.into() });
    }
    if sizeof_hdr != HEADER_SIZE as i32 {
        return Err(Error::NotNifti { path: path.into() });
    }
    if &buf[344..348] != MAGIC {
        if &buf[344..347] == b"n+2" {
            return Err(Error::Nifti2Unsupported { path: path.into() });
        }
        return Err(Error::NotNifti { path: path.into() });
    }

    let mut dim = [0i16; 8];
    let mut pixdim = [0f32; 8];
    for i in 0..8 {
        dim[i] = i16_at(buf, 40 + 2 * i, endianness);
        pixdim[i] = f32_at(buf, 76 + 4 * i, endianness);
    }
    let mut quatern = [0f32; 6];
    for i in 0..6 {
        quatern[i] = f32_at(buf, 256 + 4 * i, endianness);
    }
    let mut srow = [[0f32; 4]; 3];
    for (r, row) in srow.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = f32_at(buf, 280 + 16 * r + 4 * c, endianness);
        }
    }
    Ok(RawHeader {
        dim,
        datatype: i16_at(buf, 70, endianness),
        bitpix: i16_at(buf, 72, endianness),
        pixdim,
        vox_offset: f32_at(buf, 108, endianness),
        scl_slope: f32_at(buf, 112, endianness),
        scl_inter: f32_at(buf, 116, endianness),
        qform_code: i16_at(buf, 252, endianness),
        sform_code: i16_at(buf, 254, endianness),
        quatern,
        srow,
        endianness,
    })
}

/// Spatial dims after squeezing trailing singleton axes. 4D volumes with a
/// real time axis are rejected.
fn spatial_dims(path: &Path, dim: &[i16; 8]) -> Result<[usize; 3]> {
    let mut ndim = dim[0];
    while ndim > 3 && (dim[ndim as usize] == 1 || dim[ndim as usize] == 0) {
        ndim -= 1;
    }
    if ndim != 3 {
        return Err(Error::UnsupportedDimensions {
            detail: format!(
                "{}: want a 3D volume, header claims {}D with extents {:?}",
                path.display(),
                dim[0],
                &dim[1..=dim[0].max(1) as usize]
            ),
        });
    }
    let mut out = [0usize; 3];
    for a in 0..3 {
        let d = dim[a + 1];
        if d < 1 {
            return Err(Error::UnsupportedDimensions {
                detail: format!("{}: nonpositive extent {d} on axis {a}", path.display()),
            });
        }
        out[a] = d as usize;
    }
    Ok(out)
}

fn geometry_from_header(path: &Path, hdr: &RawHeader, dims: [usize; 3]) -> Result<ImageGeometry> {
    if hdr.sform_code > 0 {
        let mut spacing = [0f64; 3];
        let mut direction = [[0f64; 3]; 3];
        let origin = [
            hdr.srow[0][3] as f64,
            hdr.srow[1][3] as f64,
            hdr.srow[2][3] as f64,
        ];
        for c in 0..3 {
            let col = [
                hdr.srow[0][c] as f64,
                hdr.srow[1][c] as f64,
                hdr.srow[2][c] as f64,
            ];
            let norm = (col[0] * col[0] + col[1] * col[1] + col[2] * col[2]).sqrt();
            if !norm.is_finite() || norm <= 0.0 {
                return Err(Error::InvalidGeometry(format!(
                    "{}: sform column {c} has length {norm}",
                    path.display()
                )));
            }
            spacing[c] = norm;
            for r in 0..3 {
                direction[r][c] = col[r] / norm;
            }
        }
        return ImageGeometry::new(dims, spacing, origin, direction);
    }
    if hdr.qform_code > 0 {
        let b = hdr.quatern[0] as f64;
        let c = hdr.quatern[1] as f64;
        let d = hdr.quatern[2] as f64;
        let a = (1.0 - b * b - c * c - d * d).max(0.0).sqrt();
        let qfac = if hdr.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let mut direction = [
            [
                a * a + b * b - c * c - d * d,
                2.0 * (b * c - a * d),
                2.0 * (b * d + a * c),
            ],
            [
                2.0 * (b * c + a * d),
                a * a + c * c - b * b - d * d,
                2.0 * (c * d - a * b),
            ],
            [
                2.0 * (b * d - a * c),
                2.0 * (c * d + a * b),
                a * a + d * d - c * c - b * b,
            ],
        ];
        for row in &mut direction {
            row[2] *= qfac;
        }
        let spacing = [
            hdr.pixdim[1] as f64,
            hdr.pixdim[2] as f64,
            hdr.pixdim[3] as f64,
        ];
        let origin = [
            hdr.quatern[3] as f64,
            hdr.quatern[4] as f64,
            hdr.quatern[5] as f64,
        ];
        return ImageGeometry::new(dims, spacing, origin, direction);
    }
    let spacing = [
        hdr.pixdim[1] as f64,
        hdr.pixdim[2] as f64,
        hdr.pixdim[3] as f64,
    ];
    ImageGeometry::new(dims, spacing, [0.0; 3], IDENTITY_DIRECTION)
}

fn decode_values(
    path: &Path,
    data: &[u8],
    dtype: NiftiDatatype,
    count: usize,
    e: Endianness,
) -> Result<Vec<f64>> {
    let expected = count * dtype.byte_size();
    if data.len() < expected {
        return Err(Error::TruncatedData {
            path: path.into(),
            expected,
            got: data.len(),
        });
    }
    let data = &data[..expected];
    let values = match dtype {
        NiftiDatatype::Uint8 => data.iter().map(|&b| b as f64).collect(),
        NiftiDatatype::Int16 => data
            .chunks_exact(2)
            .map(|ch| {
                let b = [ch[0], ch[1]];
                (match e {
                    Endianness::Little => i16::from_le_bytes(b),
                    Endianness::Big => i16::from_be_bytes(b),
                }) as f64
            })
            .collect(),
        NiftiDatatype::Int32 => data
            .chunks_exact(4)
            .map(|ch| {
                let b = [ch[0], ch[1], ch[2], ch[3]];
                (match e {
                    Endianness::Little => i32::from_le_bytes(b),
                    Endianness::Big => i32::from_be_bytes(b),
                }) as f64
            })
            .collect(),
        NiftiDatatype::Float32 => data
            .chunks_exact(4)
            .map(|ch| {
                let b = [ch[0], ch[1], ch[2], ch[3]];
                (match e {
                    Endianness::Little => f32::from_le_bytes(b),
                    Endianness::Big => f32::from_be_bytes(b),
                }) as f64
            })
            .collect(),
        NiftiDatatype::Float64 => data
            .chunks_exact(8)
            .map(|ch| {
                let b = [ch[0], ch[1], ch[2], ch[3], ch[4], ch[5], ch[6], ch[7]];
                match e {
                    Endianness::Little => f64::from_le_bytes(b),
                    Endianness::Big => f64::from_be_bytes(b),
                }
            })
            .collect(),
    };
    Ok(values)
}

fn read_parsed(path: &Path) -> Result<(RawHeader, ImageVolume, bool)> {
    let (bytes, gzipped) = read_bytes(path)?;
    let hdr = parse_header(path, &bytes)?;
    let dims = spatial_dims(path, &hdr.dim)?;
    let dtype = NiftiDatatype::from_code(hdr.datatype)?;
    if hdr.bitpix != 0 && hdr.bitpix as usize != dtype.byte_size() * 8 {
        return Err(Error::InvalidGeometry(format!(
            "{}: bitpix {} does not match datatype {}",
            path.display(),
            hdr.bitpix,
            dtype.name()
        )));
    }
    let offset = hdr.vox_offset;
    if !offset.is_finite() || offset < HEADER_SIZE as f32 {
        return Err(Error::InvalidGeometry(format!(
            "{}: bad vox_offset {offset}",
            path.display()
        )));
    }
    let offset = offset as usize;
    if bytes.len() < offset {
        return Err(Error::TruncatedData {
            path: path.into(),
            expected: offset,
            got: bytes.len(),
        });
    }
    let geometry = geometry_from_header(path, &hdr, dims)?;
    let count = geometry.voxel_count();
    let mut values = decode_values(path, &bytes[offset..], dtype, count, hdr.endianness)?;
    let slope = hdr.scl_slope as f64;
    let inter = hdr.scl_inter as f64;
    if hdr.scl_slope != 0.0 && !(slope == 1.0 && inter == 0.0) {
        for v in &mut values {
            *v = *v * slope + inter;
        }
    }
    let volume = ImageVolume::new(geometry, values)?;
    Ok((hdr, volume, gzipped))
}

/// Read a real-valued volume, applying any header value scaling.
pub fn read_volume(path: &Path) -> Result<ImageVolume> {
    Ok(read_parsed(path)?.1)
}

/// Read a label map and check every voxel is a schema label (or 0).
pub fn read_label_volume(path: &Path, schema: &LabelSchema) -> Result<LabelVolume> {
    let volume = read_volume(path)?;
    let mut labels = Vec::with_capacity(volume.voxels.len());
    for &v in &volume.voxels {
        if !v.is_finite() || v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
            return Err(Error::InvalidLabelValue { value: v });
        }
        labels.push(v as u8);
    }
    let out = LabelVolume::new(volume.geometry, labels)?;
    out.validate_against(schema)?;
    Ok(out)
}

/// Read a volume whose values must lie in `[0, 1]`.
pub fn read_probability_volume(path: &Path) -> Result<ProbabilityVolume> {
    let volume = read_volume(path)?;
    ProbabilityVolume::new(volume.geometry, volume.voxels)
}

/// Header facts plus decoded geometry, without reading voxel data twice.
pub fn read_info(path: &Path) -> Result<FileInfo> {
    let (bytes, gzipped) = read_bytes(path)?;
    let hdr = parse_header(path, &bytes)?;
    let dims = spatial_dims(path, &hdr.dim)?;
    let dtype = NiftiDatatype::from_code(hdr.datatype)?;
    let geometry = geometry_from_header(path, &hdr, dims)?;
    Ok(FileInfo {
        datatype: dtype,
        dim: hdr.dim,
        scl_slope: hdr.scl_slope,
        scl_inter: hdr.scl_inter,
        qform_code: hdr.qform_code,
        sform_code: hdr.sform_code,
        big_endian: hdr.endianness == Endianness::Big,
        gzipped,
        geometry,
    })
}

fn encode_values(values: &[f64], dtype: NiftiDatatype) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(values.len() * dtype.byte_size());
    let integral = |v: f64, lo: f64, hi: f64, name: &'static str| -> Result<f64> {
        if !v.is_finite() || v.fract() != 0.0 || v < lo || v > hi {
            Err(Error::ValueNotRepresentable {
                value: v,
                datatype: name,
            })
        } else {
            Ok(v)
        }
    };
    match dtype {
        NiftiDatatype::Uint8 => {
            for &v in values {
                out.push(integral(v, 0.0, u8::MAX as f64, "uint8")? as u8);
            }
        }
        NiftiDatatype::Int16 => {
            for &v in values {
                let v = integral(v, i16::MIN as f64, i16::MAX as f64, "int16")? as i16;
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        NiftiDatatype::Int32 => {
            for &v in values {
                let v = integral(v, i32::MIN as f64, i32::MAX as f64, "int32")? as i32;
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        NiftiDatatype::Float32 => {
            for &v in values {
                if !v.is_finite() || v.abs() > f32::MAX as f64 {
                    return Err(Error::ValueNotRepresentable {
                        value: v,
                        datatype: "float32",
                    });
                }
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        NiftiDatatype::Float64 => {
            return Err(Error::UnsupportedDatatype {
                code: NiftiDatatype::Float64.code(),
            })
        }
    }
    Ok(out)
}

fn build_header(geometry: &ImageGeometry, dtype: NiftiDatatype) -> Result<[u8; DATA_OFFSET]> {
    let mut h = [0u8; DATA_OFFSET];
    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    h[38] = b'r'; // regular

    // dim
    h[40..42].copy_from_slice(&3i16.to_le_bytes());
    for a in 0..3 {
        let d = geometry.dims[a];
        if d > i16::MAX as usize {
            return Err(Error::InvalidParameter(format!(
                "dimension {d} exceeds the NIfTI-1 limit of {}",
                i16::MAX
            )));
        }
        h[42 + 2 * a..44 + 2 * a].copy_from_slice(&(d as i16).to_le_bytes());
    }
    for a in 3..7 {
        h[42 + 2 * a..44 + 2 * a].copy_from_slice(&1i16.to_le_bytes());
    }

    h[70..72].copy_from_slice(&dtype.code().to_le_bytes());
    h[72..74].copy_from_slice(&((dtype.byte_size() * 8) as i16).to_le_bytes());

    // pixdim: qfac then spacings
    h[76..80].copy_from_slice(&1f32.to_le_bytes());
    for a in 0..3 {
        h[80 + 4 * a..84 + 4 * a].copy_from_slice(&(geometry.spacing[a] as f32).to_le_bytes());
    }

    h[108..112].copy_from_slice(&(DATA_OFFSET as f32).to_le_bytes());
    h[112..116].copy_from_slice(&1f32.to_le_bytes()); // scl_slope
    h[116..120].copy_from_slice(&0f32.to_le_bytes()); // scl_inter
    h[123] = 2; // spatial units: millimeters

    // qform unused, sform set
    h[252..254].copy_from_slice(&0i16.to_le_bytes());
    h[254..256].copy_from_slice(&1i16.to_le_bytes());
    for r in 0..3 {
        for c in 0..3 {
            let v = (geometry.direction[r][c] * geometry.spacing[c]) as f32;
            let off = 280 + 16 * r + 4 * c;
            h[off..off + 4].copy_from_slice(&v.to_le_bytes());
        }
        let off = 280 + 16 * r + 12;
        h[off..off + 4].copy_from_slice(&(geometry.origin[r] as f32).to_le_bytes());
    }
    h[344..348].copy_from_slice(MAGIC);
    Ok(h)
}

fn write_bytes(path: &Path, header: &[u8], data: &[u8]) -> Result<()> {
    let gz = path.extension().is_some_and(|e| e == "gz");
    let io_err = |e: std::io::Error| Error::io(path, e);
    if gz {
        let file = fs::File::create(path).map_err(io_err)?;
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(header).map_err(io_err)?;
        enc.write_all(data).map_err(io_err)?;
        enc.finish().map_err(io_err)?;
    } else {
        let mut file = fs::File::create(path).map_err(io_err)?;
        file.write_all(header).map_err(io_err)?;
        file.write_all(data).map_err(io_err)?;
    }
    Ok(())
}

/// Write a volume as little-endian NIfTI-1, gzip-compressed when the path
/// ends in `.gz`. Errors if any value cannot be stored exactly in the
/// requested integer datatype, or at all in float32.
pub fn write_volume(path: &Path, volume: &ImageVolume, dtype: NiftiDatatype) -> Result<()> {
    let header = build_header(&volume.geometry, dtype)?;
    let data = encode_values(&volume.voxels, dtype)?;
    write_bytes(path, &header, &data)
}

/// Write a label map as uint8.
pub fn write_label_volume(path: &Path, volume: &LabelVolume) -> Result<()> {
    let header = build_header(&volume.geometry, NiftiDatatype::Uint8)?;
    write_bytes(path, &header, &volume.voxels)
}

/// Write a probability map as float32.
pub fn write_probability_volume(path: &Path, volume: &ProbabilityVolume) -> Result<()> {
    let header = build_header(&volume.geometry, NiftiDatatype::Float32)?;
    let data = encode_values(&volume.voxels, NiftiDatatype::Float32)?;
    write_bytes(path, &header, &data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn volume(dims: [usize; 3], values: Vec<f64>) -> ImageVolume {
        let g = ImageGeometry::new(
            dims,
            [1.0, 1.25, 2.5],
            [-10.0, 4.5, 7.25],
            IDENTITY_DIRECTION,
        )
        .unwrap();
        ImageVolume::new(g, values).unwrap()
    }

    #[test]
    fn roundtrip_plain_and_gz_preserve_values() {
        let dir = TempDir::new().unwrap();
        let v = volume([3, 2, 2], (0..12).map(|i| i as f64 - 4.0).collect());
        for name in ["t.nii", "t.nii.gz"] {
            let p = dir.path().join(name);
            write_volume(&p, &v, NiftiDatatype::Int16).unwrap();
            let back = read_volume(&p).unwrap();
            assert_eq!(back.voxels, v.voxels);
            assert!(back.geometry.approx_eq(&v.geometry));
        }
    }

    #[test]
    fn gz_suffix_actually_compresses() {
        let dir = TempDir::new().unwrap();
        let v = volume([8, 8, 8], vec![0.0; 512]);
        let plain = dir.path().join("p.nii");
        let gz = dir.path().join("p.nii.gz");
        write_volume(&plain, &v, NiftiDatatype::Float32).unwrap();
        write_volume(&gz, &v, NiftiDatatype::Float32).unwrap();
        let plain_len = fs::metadata(&plain).unwrap().len();
        let gz_len = fs::metadata(&gz).unwrap().len();
        assert!(gz_len < plain_len);
        // Magic sniffing, not the suffix, drives decompression.
        let renamed = dir.path().join("renamed.nii");
        fs::copy(&gz, &renamed).unwrap();
        assert_eq!(read_volume(&renamed).unwrap().voxels, v.voxels);
    }

    #[test]
    fn float32_roundtrip_is_exact_for_f32_values() {
        let dir = TempDir::new().unwrap();
        let vals: Vec<f64> = [0.5f32, -1.25, 3.75e-3, 1.0e20, -0.0]
            .iter()
            .map(|&v| v as f64)
            .collect();
        let v = volume([5, 1, 1], vals.clone());
        let p = dir.path().join("f.nii");
        write_volume(&p, &v, NiftiDatatype::Float32).unwrap();
        assert_eq!(read_volume(&p).unwrap().voxels, vals);
    }

    #[test]
    fn write_rejects_unrepresentable_values() {
        let dir = TempDir::new().unwrap();
        let p = dir.path().join("x.nii");
        let v = volume([1, 1, 1], vec![0.5]);
        assert!(matches!(
            write_volume(&p, &v, NiftiDatatype::Uint8),
            Err(Error::ValueNotRepresentable { .. })
        ));
        let v = volume([1, 1, 1], vec![300.0]);
        assert!(write_volume(&p, &v, NiftiDatatype::Uint8).is_err());
        let v = volume([1, 1, 1], vec![40000.0]);
        assert!(write_volume(&p, &v, NiftiDatatype::Int16).is_err());
        let v = volume([1, 1, 1], vec![1e40]);
        assert!(write_volume(&p, &v, NiftiDatatype::Float32).is_err());
        let v = volume([1, 1, 1], vec![1.0]);
        assert!(matches!(
            write_volume(&p, &v, NiftiDatatype::Float64),
            Err(Error::UnsupportedDatatype { .. })
        ));
    }

    #[test]
    fn scl_scaling_is_applied_on_read() {
        let dir = TempDir::new().unwrap();
        let p = dir.path().join("s.nii");
        let v = volume([2, 1, 1], vec![1.0, 2.0]);
        write_volume(&p, &v, NiftiDatatype::Int16).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[112..116].copy_from_slice(&2.5f32.to_le_bytes());
        bytes[116..120].copy_from_slice(&(-1.0f32).to_le_bytes());
        fs::write(&p, &bytes).unwrap();
        let back = read_volume(&p).unwrap();
        assert_eq!(back.voxels, vec![1.5, 4.0]);
    }

    #[test]
    fn big_endian_files_are_readable() {
        // Hand-build a big-endian header around int16 data.
        let mut h = vec![0u8; 352];
        h[0..4].copy_from_slice(&348i32.to_be_bytes());
        h[40..42].copy_from_slice(&3i16.to_be_bytes());
        for (a, d) in [2i16, 1, 1].iter().enumerate() {
            h[42 + 2 * a..44 + 2 * a].copy_from_slice(&d.to_be_bytes());
        }
        h[70..72].copy_from_slice(&4i16.to_be_bytes());
        h[72..74].copy_from_slice(&16i16.to_be_bytes());
        for a in 0..4 {
            h[76 + 4 * a..80 + 4 * a].copy_from_slice(&1f32.to_be_bytes());
        }
        h[108..112].copy_from_slice(&352f32.to_be_bytes());
        h[344..348].copy_from_slice(b"n+1\0");
        h.extend_from_slice(&100i16.to_be_bytes());
        h.extend_from_slice(&(-7i16).to_be_bytes());
        let dir = TempDir::new().unwrap();
        let p = dir.path().join("be.nii");
        fs::write(&p, &h).unwrap();
        let v = read_volume(&p).unwrap();
        assert_eq!(v.voxels, vec![100.0, -7.0]);
        assert!(read_info(&p).unwrap().big_endian);
    }

    #[test]
    fn sform_geometry_wins_over_pixdim() {
        let dir = TempDir::new().unwrap();
        let p = dir.path().join("g.nii");
        let g = ImageGeometry::new(
            [2, 2, 2],
            [2.0, 3.0, 4.0],
            [1.0, -2.0, 3.0],
            [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        )
        .unwrap();
        let v = ImageVolume::new(g.clone(), vec![0.0; 8]).unwrap();
        write_volume(&p, &v, NiftiDatatype::Uint8).unwrap();
        let back = read_volume(&p).unwrap();
        assert!(back.geometry.approx_eq(&g));
        assert_eq!(back.geometry.direction[0][0], -1.0);
    }

    #[test]
    fn qform_quaternion_fallback_decodes() {
        let dir = TempDir::new().unwrap();
        let p = dir.path().join("q.nii");
        let v = volume([2, 1, 1], vec![5.0, 6.0]);
        write_volume(&p, &v, NiftiDatatype::Uint8).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        // sform off, qform on with identity quaternion and an offset.
        bytes[252..254].copy_from_slice(&1i16.to_le_bytes());
        bytes[254..256].copy_from_slice(&0i16.to_le_bytes());
        for q in 0..3 {
            bytes[256 + 4 * q..260 + 4 * q].copy_from_slice(&0f32.to_le_bytes());
        }
        bytes[268..272].copy_from_slice(&9f32.to_le_bytes());
        bytes[272..276].copy_from_slice(&(-3f32).to_le_bytes());
        bytes[276..280].copy_from_slice(&0.5f32.to_le_bytes());
        fs::write(&p, &bytes).unwrap();
        let back = read_volume(&p).unwrap();
        assert_eq!(back.geometry.direction, IDENTITY_DIRECTION);
        assert_eq!(back.geometry.origin, [9.0, -3.0, 0.5]);
        assert_eq!(back.geometry.spacing, [1.0, 1.25, 2.5]);
    }

    #[test]
    fn nifti2_and_garbage_are_rejected_distinctly() {
        let dir = TempDir::new().unwrap();
        let p2 = dir.path().join("v2.nii");
        let mut h = vec![0u8; 540];
        h[0..4].copy_from_slice(&540i32.to_le_bytes());
        fs::write(&p2, &h).unwrap();
        assert!(matches!(
            read_volume(&p2),
            Err(Error::Nifti2Unsupported { .. })
        ));
        let junk = dir.path().join("junk.nii");
        fs::write(&junk, vec![0u8; 400]).unwrap();
        assert!(matches!(read_volume(&junk), Err(Error::NotNifti { .. })));
        let missing = dir.path().join("none.nii");
        assert!(matches!(read_volume(&missing), Err(Error::Io { .. })));
    }

    #[test]
    fn four_d_with_singleton_time_axis_is_accepted() {
        let dir = TempDir::new().unwrap();
        let p = dir.path().join("t4.nii");
        let v = volume([2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]);
        write_volume(&p, &v, NiftiDatatype::Int32).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[40..42].copy_from_slice(&4i16.to_le_bytes());
        bytes[48..50].copy_from_slice(&1i16.to_le_bytes());
        fs::write(&p, &bytes).unwrap();
        assert_eq!(read_volume(&p).unwrap().voxels, vec![1.0, 2.0, 3.0, 4.0]);

        bytes[48..50].copy_from_slice(&5i16.to_le_bytes());
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            read_volume(&p),
            Err(Error::UnsupportedDimensions { .. })
        ));
    }

    #[test]
    fn truncated_data_is_reported() {
        let dir = TempDir::new().unwrap();
        let p = dir.path().join("tr.nii");
        let v = volume([4, 4, 4], vec![1.0; 64]);
        write_volume(&p, &v, NiftiDatatype::Int32).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(read_volume(&p), Err(Error::TruncatedData { .. })));
    }

    #[test]
    fn label_reader_validates_schema_and_integrality() {
        let dir = TempDir::new().unwrap();
        let schema = LabelSchema::default();
        let p = dir.path().join("l.nii");
        let g = ImageGeometry::axis_aligned([2, 2, 1], [1.0; 3]).unwrap();
        let lv = LabelVolume::new(g.clone(), vec![0, 1, 2, 3]).unwrap();
        write_label_volume(&p, &lv).unwrap();
        let back = read_label_volume(&p, &schema).unwrap();
        assert_eq!(back.voxels, lv.voxels);

        // Label 9 is outside the schema.
        let bad = LabelVolume::new(g.clone(), vec![0, 9, 0, 0]).unwrap();
        write_label_volume(&p, &bad).unwrap();
        assert!(matches!(
            read_label_volume(&p, &schema),
            Err(Error::LabelOutsideSchema { label: 9 })
        ));

        // Fractional voxel values are not labels.
        let frac = ImageVolume::new(g, vec![0.0, 1.5, 0.0, 0.0]).unwrap();
        write_volume(&p, &frac, NiftiDatatype::Float32).unwrap();
        assert!(matches!(
            read_label_volume(&p, &schema),
            Err(Error::InvalidLabelValue { .. })
        ));
    }

    #[test]
    fn probability_reader_enforces_unit_range() {
        let dir = TempDir::new().unwrap();
        let p = dir.path().join("pr.nii");
        let g = ImageGeometry::axis_aligned([2, 1, 1], [1.0; 3]).unwrap();
        let ok = ProbabilityVolume::new(g.clone(), vec![0.25, 1.0]).unwrap();
        write_probability_volume(&p, &ok).unwrap();
        assert_eq!(read_probability_volume(&p).unwrap().voxels, vec![0.25, 1.0]);
        let bad = ImageVolume::new(g, vec![0.5, 1.5]).unwrap();
        write_volume(&p, &bad, NiftiDatatype::Float32).unwrap();
        assert!(read_probability_volume(&p).is_err());
    }
}
