//! Voxel volumes and the MetaImage (`.mhd` + `.raw`) subset used to store them.
//!
//! Supported element types are `MET_UCHAR`, `MET_SHORT` and `MET_FLOAT`,
//! little-endian, uncompressed, single channel, x-fastest payload order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Whether a volume holds a binary segmentation or raw intensities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    Mask,
    Image,
}

/// Typed voxel payload, kept in the on-disk element type so writes are bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub enum VoxelData {
    U8(Vec<u8>),
    I16(Vec<i16>),
    F32(Vec<f32>),
}

impl VoxelData {
    pub fn len(&self) -> usize {
        match self {
            VoxelData::U8(v) => v.len(),
            VoxelData::I16(v) => v.len(),
            VoxelData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, idx: usize) -> f64 {
        match self {
            VoxelData::U8(v) => v[idx] as f64,
            VoxelData::I16(v) => v[idx] as f64,
            VoxelData::F32(v) => v[idx] as f64,
        }
    }

    fn element_type(&self) -> &'static str {
        match self {
            VoxelData::U8(_) => "MET_UCHAR",
            VoxelData::I16(_) => "MET_SHORT",
            VoxelData::F32(_) => "MET_FLOAT",
        }
    }

    fn element_size(element_type: &str) -> Option<usize> {
        match element_type {
            "MET_UCHAR" => Some(1),
            "MET_SHORT" => Some(2),
            "MET_FLOAT" => Some(4),
            _ => None,
        }
    }

    fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            VoxelData::U8(v) => v.clone(),
            VoxelData::I16(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            VoxelData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    fn from_le_bytes(element_type: &str, bytes: &[u8]) -> Result<Self> {
        Ok(match element_type {
            "MET_UCHAR" => VoxelData::U8(bytes.to_vec()),
            "MET_SHORT" => VoxelData::I16(
                bytes
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]))
                    .collect(),
            ),
            "MET_FLOAT" => VoxelData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            other => return Err(Error::UnsupportedElementType(other.to_string())),
        })
    }
}

/// A 3D scalar grid with physical placement.
///
/// Voxel `(i, j, k)` lives at linear index `i + nx * (j + ny * k)` and at
/// physical position `origin + (i, j, k) * spacing` (millimetres).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub data: VoxelData,
    pub kind: VolumeKind,
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        data: VoxelData,
        kind: VolumeKind,
    ) -> Result<Self> {
        let expected = dims.iter().product::<usize>();
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("dims must be positive, got {dims:?}")));
        }
        if data.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "dims {dims:?} require {expected} voxels, data has {}",
                data.len()
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite origin {origin:?}")));
        }
        let mut v = Volume {
            dims,
            spacing,
            origin,
            data,
            kind,
        };
        if kind == VolumeKind::Mask {
            v.threshold_mask();
        }
        Ok(v)
    }

    /// Builds a binary mask by evaluating `inside` at every voxel index.
    pub fn mask_from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        mut inside: impl FnMut(usize, usize, usize) -> bool,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(inside(i, j, k) as u8);
                }
            }
        }
        Volume::new(dims, spacing, origin, VoxelData::U8(data), VolumeKind::Mask)
    }

    /// Empty (all background) mask on the given grid.
    pub fn empty_mask(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        Volume::mask_from_fn(dims, spacing, origin, |_, _, _| false)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    #[inline]
    pub fn value(&self, idx: usize) -> f64 {
        self.data.get(idx)
    }

    #[inline]
    pub fn is_foreground(&self, idx: usize) -> bool {
        self.data.get(idx) > 0.5
    }

    /// Physical position of a (possibly fractional or out-of-range) voxel index.
    pub fn physical(&self, i: f64, j: f64, k: f64) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + i * self.spacing[0],
            self.origin[1] + j * self.spacing[1],
            self.origin[2] + k * self.spacing[2],
        )
    }

    pub fn foreground_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_foreground(i)).count()
    }

    /// Centroid of foreground voxel centres in physical coordinates.
    pub fn foreground_centroid(&self) -> Option<Vector3<f64>> {
        let mut sum = Vector3::zeros();
        let mut n = 0usize;
        for idx in 0..self.len() {
            if self.is_foreground(idx) {
                let [i, j, k] = self.coords(idx);
                sum += self.physical(i as f64, j as f64, k as f64);
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    pub fn same_grid(&self, other: &Volume) -> bool {
        self.dims == other.dims && self.spacing == other.spacing && self.origin == other.origin
    }

    /// Foreground flags in linear index order.
    pub fn mask_bits(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.is_foreground(i)).collect()
    }

    /// Replaces the payload with `{0, 1}` bytes using the `> 0.5` rule.
    fn threshold_mask(&mut self) {
        let bits: Vec<u8> = (0..self.len()).map(|i| self.is_foreground(i) as u8).collect();
        self.data = VoxelData::U8(bits);
    }
}

/// Reads a MetaImage volume. `.mhd` headers point at a detached payload via
/// `ElementDataFile`, resolved relative to the header's directory.
pub fn read_volume(path: impl AsRef<Path>, kind: VolumeKind) -> Result<Volume> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = parse_header(&text)?;

    let bytes_per = VoxelData::element_size(&header.element_type)
        .ok_or_else(|| Error::UnsupportedElementType(header.element_type.clone()))?;
    let n: usize = header.dims.iter().product();
    let raw_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.data_file);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    if bytes.len() != n * bytes_per {
        return Err(Error::SizeMismatch {
            expected: n * bytes_per,
            found: bytes.len(),
        });
    }
    let data = VoxelData::from_le_bytes(&header.element_type, &bytes)?;
    Volume::new(header.dims, header.spacing, header.origin, data, kind)
}

/// Writes `v` as `<path>` (header) plus a sibling `.raw` payload.
pub fn write_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw_path = path.with_extension("raw");
    let raw_name = raw_path
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidArgument(format!("bad volume path {}", path.display())))?
        .to_string();

    let mut header = String::new();
    let _ = writeln!(header, "ObjectType = Image");
    let _ = writeln!(header, "NDims = 3");
    let _ = writeln!(header, "BinaryData = True");
    let _ = writeln!(header, "BinaryDataByteOrderMSB = False");
    let _ = writeln!(header, "CompressedData = False");
    let _ = writeln!(header, "Offset = {} {} {}", v.origin[0], v.origin[1], v.origin[2]);
    let _ = writeln!(
        header,
        "ElementSpacing = {} {} {}",
        v.spacing[0], v.spacing[1], v.spacing[2]
    );
    let _ = writeln!(header, "DimSize = {} {} {}", v.dims[0], v.dims[1], v.dims[2]);
    let _ = writeln!(header, "ElementType = {}", v.data.element_type());
    let _ = writeln!(header, "ElementDataFile = {raw_name}");

    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, header).map_err(|e| Error::io(path, e))?;
    fs::write(&raw_path, v.data.to_le_bytes()).map_err(|e| Error::io(&raw_path, e))?;
    Ok(())
}

struct Header {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    element_type: String,
    data_file: String,
}

fn parse_triple<T: std::str::FromStr>(key: &str, value: &str) -> Result<[T; 3]> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(Error::Header(format!("{key} needs 3 values, got `{value}`")));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(
            p.parse::<T>()
                .map_err(|_| Error::Header(format!("{key}: cannot parse `{p}`")))?,
        );
    }
    let mut it = out.into_iter();
    Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Header(format!("{key}: expected True/False, got `{value}`"))),
    }
}

fn parse_header(text: &str) -> Result<Header> {
    let mut dims = None;
    let mut spacing = [1.0; 3];
    let mut origin = [0.0; 3];
    let mut element_type = None;
    let mut data_file = None;

    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Header(format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "NDims" => {
                if value != "3" {
                    return Err(Error::Header(format!("only 3D volumes supported, NDims = {value}")));
                }
            }
            "DimSize" => {
                let d: [usize; 3] = parse_triple(key, value)?;
                if d.iter().any(|&x| x == 0) {
                    return Err(Error::Header(format!("DimSize must be positive, got `{value}`")));
                }
                dims = Some(d);
            }
            "ElementSpacing" | "ElementSize" => spacing = parse_triple(key, value)?,
            "Offset" | "Origin" | "Position" => origin = parse_triple(key, value)?,
            "ElementType" => element_type = Some(value.to_string()),
            "ElementDataFile" => {
                if value.eq_ignore_ascii_case("LOCAL") || value.starts_with("LIST") || value.contains('%') {
                    return Err(Error::Header(format!("unsupported ElementDataFile `{value}`")));
                }
                data_file = Some(value.to_string());
            }
            "BinaryDataByteOrderMSB" | "ElementByteOrderMSB" => {
                if parse_bool(key, value)? {
                    return Err(Error::Header("big-endian payloads are not supported".into()));
                }
            }
            "CompressedData" => {
                if parse_bool(key, value)? {
                    return Err(Error::Header("compressed payloads are not supported".into()));
                }
            }
            "ElementNumberOfChannels" => {
                if value != "1" {
                    return Err(Error::Header(format!("multi-channel volumes unsupported ({value})")));
                }
            }
            _ => {}
        }
    }

    let element_type = element_type.ok_or_else(|| Error::Header("missing ElementType".into()))?;
    if VoxelData::element_size(&element_type).is_none() {
        return Err(Error::UnsupportedElementType(element_type));
    }
    if spacing.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Header(format!("ElementSpacing must be positive, got {spacing:?}")));
    }
    Ok(Header {
        dims: dims.ok_or_else(|| Error::Header("missing DimSize".into()))?,
        spacing,
        origin,
        element_type,
        data_file: data_file.ok_or_else(|| Error::Header("missing ElementDataFile".into()))?,
    })
}
