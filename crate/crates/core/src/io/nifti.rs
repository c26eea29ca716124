//! Single-file NIfTI-1 (`.nii`) volumes.
//!
//! Arrays use C order with the file's axes reversed, so a 4D file with
//! `dim = [4, nx, ny, nz, nt]` becomes an array of shape `(nt, nz, ny, nx)`.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array3, Array4, ArrayD, ArrayViewD, Axis, IxDyn};

use crate::dwi::Spacing;
use crate::error::{Error, Result};
use crate::io::atomic_write;

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const DATA_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_XYZT_UNITS: usize = 123;
const OFF_DESCRIP: usize = 148;
const OFF_SFORM_CODE: usize = 254;
const OFF_SROW: usize = 280;
const OFF_MAGIC: usize = 344;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    Uint8,
    Int16,
    Float32,
    Float64,
}

impl DataType {
    pub fn code(self) -> i16 {
        match self {
            DataType::Uint8 => 2,
            DataType::Int16 => 4,
            DataType::Float32 => 16,
            DataType::Float64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(DataType::Uint8),
            4 => Some(DataType::Int16),
            16 => Some(DataType::Float32),
            64 => Some(DataType::Float64),
            _ => None,
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            DataType::Uint8 => 1,
            DataType::Int16 => 2,
            DataType::Float32 => 4,
            DataType::Float64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

/// A decoded volume with intensity scaling already applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub data: ArrayD<f64>,
    pub spacing: Spacing,
    pub datatype: DataType,
    pub endian: Endian,
    pub scl_slope: f64,
    pub scl_inter: f64,
}

impl Volume {
    pub fn ndim(&self) -> usize {
        self.data.ndim()
    }

    /// 3D view as `(z, y, x)`. A 4D file with a single frame is accepted.
    pub fn into_3d(self, path: &Path) -> Result<Array3<f64>> {
        let mut data = self.data;
        if data.ndim() == 4 && data.shape()[0] == 1 {
            data = data.index_axis_move(Axis(0), 0);
        }
        let shape = data.shape().to_vec();
        data.into_dimensionality().map_err(|_| Error::Format {
            path: path.to_path_buf(),
            offset: OFF_DIM as u64,
            message: format!("expected a 3D volume, found shape {shape:?}"),
        })
    }

    /// 4D view as `(t, z, y, x)`.
    pub fn into_4d(self, path: &Path) -> Result<Array4<f64>> {
        let shape = self.data.shape().to_vec();
        self.data.into_dimensionality().map_err(|_| Error::Format {
            path: path.to_path_buf(),
            offset: OFF_DIM as u64,
            message: format!("expected a 4D volume, found shape {shape:?}"),
        })
    }
}

fn format_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
}

impl Header<'_> {
    fn i16<B: ByteOrder>(&self, off: usize) -> i16 {
        B::read_i16(&self.bytes[off..off + 2])
    }

    fn f32<B: ByteOrder>(&self, off: usize) -> f32 {
        B::read_f32(&self.bytes[off..off + 4])
    }
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_volume(&bytes, path)
}

/// Decode an in-memory `.nii` image; `path` only labels errors.
pub fn parse_volume(bytes: &[u8], path: &Path) -> Result<Volume> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        return Err(format_err(path, 0, "gzip-compressed file; decompress to .nii first"));
    }
    if bytes.len() < HEADER_SIZE {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated header: {} of {HEADER_SIZE} bytes", bytes.len()),
        ));
    }
    let endian = if LittleEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        Endian::Little
    } else if BigEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(format_err(path, 0, "sizeof_hdr is not 348 in either byte order"));
    };
    match endian {
        Endian::Little => parse_with::<LittleEndian>(bytes, path, endian),
        Endian::Big => parse_with::<BigEndian>(bytes, path, endian),
    }
}

fn parse_with<B: ByteOrder>(bytes: &[u8], path: &Path, endian: Endian) -> Result<Volume> {
    let h = Header { bytes };
    if &bytes[OFF_MAGIC..OFF_MAGIC + 4] != MAGIC {
        return Err(format_err(
            path,
            OFF_MAGIC,
            format!("bad magic {:?}, expected single-file \"n+1\"", &bytes[OFF_MAGIC..OFF_MAGIC + 4]),
        ));
    }
    let ndim = h.i16::<B>(OFF_DIM);
    if !(1..=7).contains(&ndim) {
        return Err(format_err(path, OFF_DIM, format!("dim[0] = {ndim} outside 1..=7")));
    }
    let mut dims = Vec::with_capacity(ndim as usize);
    for i in 1..=ndim as usize {
        let d = h.i16::<B>(OFF_DIM + 2 * i);
        if d < 1 {
            return Err(format_err(path, OFF_DIM + 2 * i, format!("dim[{i}] = {d} must be >= 1")));
        }
        dims.push(d as usize);
    }
    let code = h.i16::<B>(OFF_DATATYPE);
    let datatype = DataType::from_code(code).ok_or_else(|| {
        format_err(
            path,
            OFF_DATATYPE,
            format!("unsupported datatype {code}; supported: uint8 (2), int16 (4), float32 (16), float64 (64)"),
        )
    })?;
    let bitpix = h.i16::<B>(OFF_BITPIX);
    if bitpix as usize != 8 * datatype.bytes() {
        return Err(format_err(
            path,
            OFF_BITPIX,
            format!("bitpix {bitpix} does not match datatype {code}"),
        ));
    }
    let pix = |i: usize| h.f32::<B>(OFF_PIXDIM + 4 * i) as f64;
    let spacing = Spacing::new(
        if ndim >= 3 { pix(3) } else { 1.0 },
        if ndim >= 2 { pix(2) } else { 1.0 },
        pix(1),
    );
    let vox_offset = h.f32::<B>(OFF_VOX_OFFSET);
    if !(vox_offset >= DATA_OFFSET as f32) || vox_offset.fract() != 0.0 {
        return Err(format_err(
            path,
            OFF_VOX_OFFSET,
            format!("vox_offset {vox_offset} must be an integer >= {DATA_OFFSET}"),
        ));
    }
    let start = vox_offset as usize;
    let slope = h.f32::<B>(OFF_SCL_SLOPE) as f64;
    let inter = h.f32::<B>(OFF_SCL_INTER) as f64;
    // A zero or non-finite slope means "no scaling".
    let (slope, inter) = if slope == 0.0 || !slope.is_finite() {
        (1.0, 0.0)
    } else {
        (slope, if inter.is_finite() { inter } else { 0.0 })
    };

    let count: usize = dims.iter().product();
    let end = start + count * datatype.bytes();
    if bytes.len() < end {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated data: need {end} bytes, file has {}", bytes.len()),
        ));
    }
    let mut rd = Cursor::new(&bytes[start..end]);
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        let raw = match datatype {
            DataType::Uint8 => rd.read_u8().map(f64::from),
            DataType::Int16 => rd.read_i16::<B>().map(f64::from),
            DataType::Float32 => rd.read_f32::<B>().map(f64::from),
            DataType::Float64 => rd.read_f64::<B>(),
        }
        .map_err(|e| Error::io(path, e))?;
        values.push(if slope == 1.0 && inter == 0.0 { raw } else { raw * slope + inter });
    }
    let shape: Vec<usize> = dims.iter().rev().copied().collect();
    let data = ArrayD::from_shape_vec(IxDyn(&shape), values).expect("shape matches count");
    Ok(Volume {
        data,
        spacing,
        datatype,
        endian,
        scl_slope: slope,
        scl_inter: inter,
    })
}

/// On-disk encoding for [`write_volume`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WriteOptions {
    pub datatype: DataType,
    pub endian: Endian,
    /// Stored value is `(v - scl_inter) / scl_slope`.
    pub scl_slope: f64,
    pub scl_inter: f64,
}

impl Default for WriteOptions {
    fn default() -> Self {
        WriteOptions {
            datatype: DataType::Float32,
            endian: Endian::Little,
            scl_slope: 1.0,
            scl_inter: 0.0,
        }
    }
}

/// Encode a volume whose axes are in reversed file order, e.g. `(z, y, x)`.
pub fn encode_volume(data: ArrayViewD<'_, f64>, spacing: Spacing, opts: &WriteOptions) -> Result<Vec<u8>> {
    match opts.endian {
        Endian::Little => encode_with::<LittleEndian>(data, spacing, opts),
        Endian::Big => encode_with::<BigEndian>(data, spacing, opts),
    }
}

fn encode_with<B: ByteOrder>(data: ArrayViewD<'_, f64>, spacing: Spacing, opts: &WriteOptions) -> Result<Vec<u8>> {
    let ndim = data.ndim();
    if !(1..=7).contains(&ndim) {
        return Err(Error::InvalidArgument(format!("cannot write a {ndim}-dimensional volume")));
    }
    if data.shape().iter().any(|&d| d == 0 || d > i16::MAX as usize) {
        return Err(Error::InvalidArgument(format!(
            "volume dimensions {:?} must be in 1..={}",
            data.shape(),
            i16::MAX
        )));
    }
    if !(opts.scl_slope != 0.0 && opts.scl_slope.is_finite() && opts.scl_inter.is_finite()) {
        return Err(Error::InvalidArgument("scl_slope must be finite and non-zero".into()));
    }
    let mut out = vec![0u8; DATA_OFFSET];
    B::write_i32(&mut out[0..4], HEADER_SIZE as i32);
    B::write_i16(&mut out[OFF_DIM..], ndim as i16);
    for (i, &d) in data.shape().iter().rev().enumerate() {
        B::write_i16(&mut out[OFF_DIM + 2 * (i + 1)..], d as i16);
    }
    for i in ndim + 1..8 {
        B::write_i16(&mut out[OFF_DIM + 2 * i..], 1);
    }
    B::write_i16(&mut out[OFF_DATATYPE..], opts.datatype.code());
    B::write_i16(&mut out[OFF_BITPIX..], (8 * opts.datatype.bytes()) as i16);
    let pix = [1.0, spacing.dx, spacing.dy, spacing.dz, 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pix.iter().enumerate() {
        B::write_f32(&mut out[OFF_PIXDIM + 4 * i..], *p as f32);
    }
    B::write_f32(&mut out[OFF_VOX_OFFSET..], DATA_OFFSET as f32);
    B::write_f32(&mut out[OFF_SCL_SLOPE..], opts.scl_slope as f32);
    B::write_f32(&mut out[OFF_SCL_INTER..], opts.scl_inter as f32);
    // millimetres and seconds
    out[OFF_XYZT_UNITS] = 2 | 8;
    let descrip = b"pddwi";
    out[OFF_DESCRIP..OFF_DESCRIP + descrip.len()].copy_from_slice(descrip);
    // scanner-anchored diagonal affine
    B::write_i16(&mut out[OFF_SFORM_CODE..], 1);
    for (row, s) in [spacing.dx, spacing.dy, spacing.dz].iter().enumerate() {
        B::write_f32(&mut out[OFF_SROW + 16 * row + 4 * row..], *s as f32);
    }
    out[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(MAGIC);

    out.reserve(data.len() * opts.datatype.bytes());
    let identity = opts.scl_slope == 1.0 && opts.scl_inter == 0.0;
    for &v in data.iter() {
        let raw = if identity { v } else { (v - opts.scl_inter) / opts.scl_slope };
        match opts.datatype {
            DataType::Float32 => out.write_f32::<B>(raw as f32),
            DataType::Float64 => out.write_f64::<B>(raw),
            DataType::Int16 => out.write_i16::<B>(integral(raw, i16::MIN as f64, i16::MAX as f64)? as i16),
            DataType::Uint8 => out.write_u8(integral(raw, 0.0, u8::MAX as f64)? as u8),
        }
        .expect("writing to a Vec cannot fail");
    }
    Ok(out)
}

fn integral(v: f64, lo: f64, hi: f64) -> Result<f64> {
    let r = v.round();
    if !(r >= lo && r <= hi) {
        return Err(Error::Numeric(format!("value {v} does not fit the integer datatype range [{lo}, {hi}]")));
    }
    Ok(r)
}

pub fn write_volume(
    path: impl AsRef<Path>,
    data: ArrayViewD<'_, f64>,
    spacing: Spacing,
    opts: &WriteOptions,
) -> Result<()> {
    let bytes = encode_volume(data, spacing, opts)?;
    atomic_write(path.as_ref(), &bytes)
}

/// Read a 3D volume such as a mask or parameter map.
pub fn read_3d(path: impl AsRef<Path>) -> Result<(Array3<f64>, Spacing)> {
    let path: PathBuf = path.as_ref().to_path_buf();
    let v = read_volume(&path)?;
    let spacing = v.spacing;
    Ok((v.into_3d(&path)?, spacing))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn ramp(shape: &[usize]) -> ArrayD<f64> {
        let n: usize = shape.iter().product();
        Array::from_shape_vec(IxDyn(shape), (0..n).map(|i| i as f64 * 0.5 - 3.0).collect()).unwrap()
    }

    #[test]
    fn float32_round_trip_is_bit_exact_both_endians() {
        let data = ramp(&[2, 3, 4]).mapv(|v| (v as f32 * 1.1) as f64);
        for endian in [Endian::Little, Endian::Big] {
            let opts = WriteOptions { endian, ..Default::default() };
            let bytes = encode_volume(data.view(), Spacing::new(3.0, 2.0, 1.5), &opts).unwrap();
            assert_eq!(bytes.len(), DATA_OFFSET + 24 * 4);
            let v = parse_volume(&bytes, Path::new("mem")).unwrap();
            assert_eq!(v.endian, endian);
            assert_eq!(v.data.shape(), &[2, 3, 4]);
            assert_eq!(v.spacing, Spacing::new(3.0, 2.0, 1.5));
            for (a, b) in v.data.iter().zip(data.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            assert_eq!(encode_volume(v.data.view(), v.spacing, &opts).unwrap(), bytes);
        }
    }

    #[test]
    fn int16_scaling_applies_slope_and_intercept() {
        let data = ArrayD::from_elem(IxDyn(&[1, 1, 1]), 21.0);
        let opts = WriteOptions {
            datatype: DataType::Int16,
            scl_slope: 2.0,
            scl_inter: 1.0,
            ..Default::default()
        };
        let bytes = encode_volume(data.view(), Spacing::isotropic(2.0), &opts).unwrap();
        assert_eq!(LittleEndian::read_i16(&bytes[DATA_OFFSET..]), 10);
        let v = parse_volume(&bytes, Path::new("mem")).unwrap();
        assert_eq!(v.data[[0, 0, 0]], 21.0);
        assert_eq!(v.spacing, Spacing::isotropic(2.0));
    }

    #[test]
    fn zero_slope_means_unscaled() {
        let data = ArrayD::from_elem(IxDyn(&[1, 1, 2]), 7.0);
        let mut bytes = encode_volume(data.view(), Spacing::isotropic(1.0), &WriteOptions::default()).unwrap();
        LittleEndian::write_f32(&mut bytes[OFF_SCL_SLOPE..], 0.0);
        LittleEndian::write_f32(&mut bytes[OFF_SCL_INTER..], 5.0);
        let v = parse_volume(&bytes, Path::new("mem")).unwrap();
        assert_eq!(v.data[[0, 0, 1]], 7.0);
    }

    #[test]
    fn malformed_files_report_offsets() {
        let data = ramp(&[2, 2, 2]);
        let good = encode_volume(data.view(), Spacing::isotropic(1.0), &WriteOptions::default()).unwrap();
        let offset = |bytes: &[u8]| match parse_volume(bytes, Path::new("x.nii")) {
            Err(Error::Format { offset, .. }) => offset,
            other => panic!("expected format error, got {other:?}"),
        };
        let mut bad = good.clone();
        bad[OFF_MAGIC] = b'x';
        assert_eq!(offset(&bad), OFF_MAGIC as u64);
        let mut bad = good.clone();
        LittleEndian::write_i16(&mut bad[OFF_DATATYPE..], 512);
        assert_eq!(offset(&bad), OFF_DATATYPE as u64);
        assert_eq!(offset(&good[..good.len() - 1]), (good.len() - 1) as u64);
        assert_eq!(offset(&good[..100]), 100);
        let mut bad = good.clone();
        LittleEndian::write_i32(&mut bad[0..4], 1234);
        assert_eq!(offset(&bad), 0);
    }

    #[test]
    fn out_of_range_integers_rejected() {
        let data = ArrayD::from_elem(IxDyn(&[1, 1, 1]), 70000.0);
        let opts = WriteOptions { datatype: DataType::Int16, ..Default::default() };
        assert!(matches!(
            encode_volume(data.view(), Spacing::isotropic(1.0), &opts),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn four_d_shape_and_single_frame_squeeze() {
        let data = ramp(&[4, 2, 3, 5]);
        let bytes = encode_volume(data.view(), Spacing::isotropic(1.0), &WriteOptions::default()).unwrap();
        let v = parse_volume(&bytes, Path::new("mem")).unwrap();
        let a = v.into_4d(Path::new("mem")).unwrap();
        assert_eq!(a.dim(), (4, 2, 3, 5));
        assert_eq!(a[[3, 1, 2, 4]], data[[3, 1, 2, 4]]);

        let one = ramp(&[1, 2, 3, 5]);
        let bytes = encode_volume(one.view(), Spacing::isotropic(1.0), &WriteOptions::default()).unwrap();
        let v = parse_volume(&bytes, Path::new("mem")).unwrap();
        assert_eq!(v.into_3d(Path::new("mem")).unwrap().dim(), (2, 3, 5));
    }
}
