//! Minimal NIfTI-1 reader and writer.
//!
//! Grid axes are the NIfTI axes reversed: NIfTI stores `x` fastest, the grid
//! stores its last axis fastest, so the payload order is shared and a volume
//! with NIfTI dims `(nx, ny, nz)` becomes a grid of dims `[nz, ny, nx]`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, LabelMap, ScalarImage};

pub const HEADER_SIZE: usize = 348;
/// Header plus the four extension-flag bytes.
pub const VOX_OFFSET: usize = 352;

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_FLOAT32: i16 = 16;
pub const DT_FLOAT64: i16 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ByteOrder {
    #[default]
    Little,
    Big,
}

/// Header information carried alongside a volume. Spacing and orientation are
/// recorded and echoed on write; no computation uses them.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeMeta {
    /// Grid-order dims (NIfTI order reversed).
    pub dims: Vec<usize>,
    pub datatype: i16,
    /// Grid-order voxel spacing.
    pub spacing: Vec<f32>,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub byte_order: ByteOrder,
    pub source: Option<PathBuf>,
    /// `pixdim[0]`, the qform handedness factor.
    pub qfac: f32,
    pub xyzt_units: u8,
    pub qform_code: i16,
    pub sform_code: i16,
    /// quatern_b, quatern_c, quatern_d, qoffset_x, qoffset_y, qoffset_z.
    pub quatern: [f32; 6],
    pub srow: [[f32; 4]; 3],
}

impl VolumeMeta {
    /// Unit spacing, no orientation.
    pub fn for_dims(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            datatype: DT_FLOAT32,
            spacing: vec![1.0; dims.len()],
            scl_slope: 0.0,
            scl_inter: 0.0,
            byte_order: ByteOrder::Little,
            source: None,
            qfac: 1.0,
            xyzt_units: 0,
            qform_code: 0,
            sform_code: 0,
            quatern: [0.0; 6],
            srow: [[0.0; 4]; 3],
        }
    }
}

/// A decoded volume: scaled voxel values in grid order.
#[derive(Debug, Clone)]
pub struct Volume {
    pub meta: VolumeMeta,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn into_image(self) -> Result<(ScalarImage, VolumeMeta)> {
        let grid = GridSpec::new(&self.meta.dims)?;
        Ok((ScalarImage::new(grid, self.data)?, self.meta))
    }

    /// Labels must be non-negative integers.
    pub fn into_labels(self) -> Result<(LabelMap, VolumeMeta)> {
        let grid = GridSpec::new(&self.meta.dims)?;
        let labels = self
            .data
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                    Ok(v as u32)
                } else {
                    Err(Error::InvalidParameter(format!("label value {v} is not a non-negative integer")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((LabelMap::new(grid, labels)?, self.meta))
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    order: ByteOrder,
}

impl Cursor<'_> {
    fn bytes<const N: usize>(&self, at: usize) -> [u8; N] {
        self.buf[at..at + N].try_into().expect("header slice")
    }
    fn i16(&self, at: usize) -> i16 {
        match self.order {
            ByteOrder::Little => i16::from_le_bytes(self.bytes(at)),
            ByteOrder::Big => i16::from_be_bytes(self.bytes(at)),
        }
    }
    fn f32(&self, at: usize) -> f32 {
        match self.order {
            ByteOrder::Little => f32::from_le_bytes(self.bytes(at)),
            ByteOrder::Big => f32::from_be_bytes(self.bytes(at)),
        }
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// `x.hdr` -> `x.img`, `x.hdr.gz` -> `x.img.gz` (falling back to `x.img`).
fn paired_image_path(header: &Path) -> PathBuf {
    let name = header.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let swapped = if let Some(stem) = name.strip_suffix(".hdr.gz") {
        vec![format!("{stem}.img.gz"), format!("{stem}.img")]
    } else if let Some(stem) = name.strip_suffix(".hdr") {
        vec![format!("{stem}.img"), format!("{stem}.img.gz")]
    } else {
        vec![format!("{name}.img")]
    };
    swapped
        .iter()
        .map(|n| header.with_file_name(n))
        .find(|p| p.exists())
        .unwrap_or_else(|| header.with_file_name(&swapped[0]))
}

/// Reads a `.nii`, `.nii.gz`, or `.hdr`/`.img` pair.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = read_maybe_gz(path)?;
    let mut volume = parse_nifti(&bytes, || read_maybe_gz(&paired_image_path(path)))?;
    volume.meta.source = Some(path.to_path_buf());
    Ok(volume)
}

/// Parses an in-memory header (plus inline payload for `n+1`). `paired` is
/// asked for the payload bytes when the magic is `ni1`.
pub fn parse_nifti(bytes: &[u8], paired: impl FnOnce() -> Result<Vec<u8>>) -> Result<Volume> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::NotNifti(format!("only {} header bytes", bytes.len())));
    }
    let order = if i32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) == HEADER_SIZE as i32 {
        ByteOrder::Little
    } else if i32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes")) == HEADER_SIZE as i32 {
        ByteOrder::Big
    } else {
        return Err(Error::NotNifti("sizeof_hdr is not 348 in either byte order".into()));
    };
    let magic = &bytes[344..348];
    let inline = match magic {
        b"n+1\0" => true,
        b"ni1\0" => false,
        _ => {
            return Err(Error::NotNifti(format!(
                "bad magic {:?}",
                String::from_utf8_lossy(magic).trim_end_matches('\0')
            )))
        }
    };
    let h = Cursor { buf: bytes, order };

    let ndim = h.i16(40);
    if ndim > 3 {
        return Err(Error::TooManyDims(ndim));
    }
    if ndim < 1 {
        return Err(Error::NotNifti(format!("dim[0] = {ndim}")));
    }
    let mut nifti_dims = Vec::new();
    for k in 1..=ndim as usize {
        let d = h.i16(40 + 2 * k);
        if d < 1 {
            return Err(Error::NotNifti(format!("dim[{k}] = {d}")));
        }
        nifti_dims.push(d as usize);
    }
    let mut pixdim: Vec<f32> = (1..=ndim as usize).map(|k| h.f32(76 + 4 * k)).collect();
    while nifti_dims.len() > 2 && nifti_dims.last() == Some(&1) {
        nifti_dims.pop();
        pixdim.pop();
    }

    let datatype = h.i16(70);
    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(Error::UnsupportedDatatype(other)),
    };
    let count: usize = nifti_dims.iter().product();
    let expected = count * width;

    let external;
    let payload: &[u8] = if inline {
        let offset = h.f32(108);
        let offset = if offset.is_finite() && offset >= HEADER_SIZE as f32 { offset as usize } else { VOX_OFFSET };
        let avail = bytes.len().saturating_sub(offset);
        if avail < expected {
            return Err(Error::TruncatedPayload { expected, found: avail });
        }
        &bytes[offset..offset + expected]
    } else {
        external = paired()?;
        if external.len() < expected {
            return Err(Error::TruncatedPayload { expected, found: external.len() });
        }
        &external[..expected]
    };

    let slope = h.f32(112);
    let inter = h.f32(116);
    let scale = slope != 0.0 && slope.is_finite();
    let mut data = Vec::with_capacity(count);
    for chunk in payload.chunks_exact(width) {
        let v = match (datatype, order) {
            (DT_UINT8, _) => chunk[0] as f64,
            (DT_INT16, ByteOrder::Little) => i16::from_le_bytes([chunk[0], chunk[1]]) as f64,
            (DT_INT16, ByteOrder::Big) => i16::from_be_bytes([chunk[0], chunk[1]]) as f64,
            (DT_FLOAT32, ByteOrder::Little) => f32::from_le_bytes(chunk.try_into().expect("4")) as f64,
            (DT_FLOAT32, ByteOrder::Big) => f32::from_be_bytes(chunk.try_into().expect("4")) as f64,
            (_, ByteOrder::Little) => f64::from_le_bytes(chunk.try_into().expect("8")),
            (_, ByteOrder::Big) => f64::from_be_bytes(chunk.try_into().expect("8")),
        };
        data.push(if scale { slope as f64 * v + inter as f64 } else { v });
    }

    let mut quatern = [0.0; 6];
    for (k, q) in quatern.iter_mut().enumerate() {
        *q = h.f32(256 + 4 * k);
    }
    let mut srow = [[0.0; 4]; 3];
    for (r, row) in srow.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = h.f32(280 + 16 * r + 4 * c);
        }
    }
    nifti_dims.reverse();
    pixdim.reverse();
    Ok(Volume {
        meta: VolumeMeta {
            dims: nifti_dims,
            datatype,
            spacing: pixdim,
            scl_slope: slope,
            scl_inter: inter,
            byte_order: order,
            source: None,
            qfac: h.f32(76),
            xyzt_units: bytes[123],
            qform_code: h.i16(252),
            sform_code: h.i16(254),
            quatern,
            srow,
        },
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NiftiWriteOptions {
    pub byte_order: ByteOrder,
    /// Compress the output. Paths ending in `.gz` are always compressed.
    pub gzip: bool,
}

/// Serializes values in grid order as a single-file float32 NIfTI-1 image.
/// When `meta` is given its spacing and orientation fields are echoed.
pub fn encode_nifti(dims: &[usize], values: &[f64], meta: Option<&VolumeMeta>, order: ByteOrder) -> Result<Vec<u8>> {
    if !(1..=3).contains(&dims.len()) {
        return Err(Error::WrongDimensionality(dims.len()));
    }
    if dims.iter().product::<usize>() != values.len() {
        return Err(Error::ShapeMismatch(format!("{} values for dims {dims:?}", values.len())));
    }
    let mut buf = vec![0u8; VOX_OFFSET];
    let put = |buf: &mut Vec<u8>, at: usize, b: &[u8]| buf[at..at + b.len()].copy_from_slice(b);
    macro_rules! num {
        ($v:expr) => {
            match order {
                ByteOrder::Little => $v.to_le_bytes(),
                ByteOrder::Big => $v.to_be_bytes(),
            }
        };
    }
    put(&mut buf, 0, &num!(HEADER_SIZE as i32));
    buf[38] = b'r';
    let nifti_dims: Vec<usize> = dims.iter().rev().copied().collect();
    let mut dim = [1i16; 8];
    dim[0] = nifti_dims.len() as i16;
    for (k, &d) in nifti_dims.iter().enumerate() {
        dim[k + 1] = i16::try_from(d).map_err(|_| Error::InvalidParameter(format!("extent {d} too large for NIfTI-1")))?;
    }
    for (k, d) in dim.iter().enumerate() {
        put(&mut buf, 40 + 2 * k, &num!(*d));
    }
    put(&mut buf, 70, &num!(DT_FLOAT32));
    put(&mut buf, 72, &num!(32i16));

    let fallback = VolumeMeta::for_dims(dims);
    let meta = meta.filter(|m| m.spacing.len() == dims.len()).unwrap_or(&fallback);
    let mut pixdim = [1.0f32; 8];
    pixdim[0] = if meta.qfac == -1.0 { -1.0 } else { 1.0 };
    for (k, &s) in meta.spacing.iter().rev().enumerate() {
        pixdim[k + 1] = s;
    }
    for (k, p) in pixdim.iter().enumerate() {
        put(&mut buf, 76 + 4 * k, &num!(*p));
    }
    put(&mut buf, 108, &num!(VOX_OFFSET as f32));
    buf[123] = meta.xyzt_units;
    put(&mut buf, 252, &num!(meta.qform_code));
    put(&mut buf, 254, &num!(meta.sform_code));
    for (k, q) in meta.quatern.iter().enumerate() {
        put(&mut buf, 256 + 4 * k, &num!(*q));
    }
    for (r, row) in meta.srow.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            put(&mut buf, 280 + 16 * r + 4 * c, &num!(*v));
        }
    }
    put(&mut buf, 344, b"n+1\0");

    buf.reserve(values.len() * 4);
    for &v in values {
        buf.extend_from_slice(&num!(v as f32));
    }
    Ok(buf)
}

pub fn write_nifti(
    path: impl AsRef<Path>,
    dims: &[usize],
    values: &[f64],
    meta: Option<&VolumeMeta>,
    options: NiftiWriteOptions,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_nifti(dims, values, meta, options.byte_order)?;
    let gzip = options.gzip || path.extension().is_some_and(|e| e == "gz");
    let out = if gzip {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes
    };
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_image(path: impl AsRef<Path>, image: &ScalarImage, meta: Option<&VolumeMeta>) -> Result<()> {
    write_nifti(path, image.grid().dims(), image.values(), meta, NiftiWriteOptions::default())
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelMap, meta: Option<&VolumeMeta>) -> Result<()> {
    let values: Vec<f64> = labels.values().iter().map(|&l| l as f64).collect();
    write_nifti(path, labels.grid().dims(), &values, meta, NiftiWriteOptions::default())
}

pub fn read_image(path: impl AsRef<Path>) -> Result<(ScalarImage, VolumeMeta)> {
    read_nifti(path)?.into_image()
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<(LabelMap, VolumeMeta)> {
    read_nifti(path)?.into_labels()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_pair() -> Result<Vec<u8>> {
        panic!("inline file asked for a paired image")
    }

    #[test]
    fn header_is_348_plus_extension() {
        let bytes = encode_nifti(&[4, 4], &[0.0; 16], None, ByteOrder::Little).unwrap();
        assert_eq!(bytes.len(), VOX_OFFSET + 16 * 4);
        assert_eq!(&bytes[0..4], &348i32.to_le_bytes());
        assert_eq!(&bytes[344..348], b"n+1\0");
        assert_eq!(&bytes[108..112], &352f32.to_le_bytes());
        assert_eq!(&bytes[348..352], &[0, 0, 0, 0]);
    }

    #[test]
    fn round_trip_both_orders() {
        let dims = [4, 4, 4];
        let values: Vec<f64> = (0..64).map(|k| (k as f32 * 0.37 - 5.0) as f64).collect();
        for order in [ByteOrder::Little, ByteOrder::Big] {
            let bytes = encode_nifti(&dims, &values, None, order).unwrap();
            let v = parse_nifti(&bytes, no_pair).unwrap();
            assert_eq!(v.meta.dims, dims);
            assert_eq!(v.meta.byte_order, order);
            assert_eq!(v.data, values);
        }
    }

    #[test]
    fn swapped_header_matches_twin() {
        let dims = [6, 4];
        let values: Vec<f64> = (0..24).map(|k| k as f64 * 0.5).collect();
        let le = encode_nifti(&dims, &values, None, ByteOrder::Little).unwrap();
        // Build the big-endian twin by hand: swap every numeric header field
        // and every payload word.
        let mut be = le.clone();
        be[0..4].reverse();
        for k in 0..8 {
            be[40 + 2 * k..42 + 2 * k].reverse();
        }
        be[70..72].reverse();
        be[72..74].reverse();
        for k in 0..8 {
            be[76 + 4 * k..80 + 4 * k].reverse();
        }
        be[108..112].reverse();
        for w in be[VOX_OFFSET..].chunks_exact_mut(4) {
            w.reverse();
        }
        assert_eq!(i32::from_le_bytes(be[0..4].try_into().unwrap()), 1_543_569_408);
        let v = parse_nifti(&be, no_pair).unwrap();
        assert_eq!(v.meta.byte_order, ByteOrder::Big);
        assert_eq!(v.data, parse_nifti(&le, no_pair).unwrap().data);
    }

    #[test]
    fn distinct_errors() {
        let good = encode_nifti(&[4, 4], &[1.0; 16], None, ByteOrder::Little).unwrap();

        let mut bad = good.clone();
        bad[344..348].copy_from_slice(b"abc\0");
        let e = parse_nifti(&bad, no_pair).unwrap_err();
        assert!(e.to_string().contains("not a NIfTI-1 file"), "{e}");

        let mut bad = good.clone();
        bad[70..72].copy_from_slice(&128i16.to_le_bytes());
        assert!(matches!(parse_nifti(&bad, no_pair), Err(Error::UnsupportedDatatype(128))));

        let bad = &good[..good.len() - 3];
        assert!(matches!(parse_nifti(bad, no_pair), Err(Error::TruncatedPayload { expected: 64, found: 61 })));

        let mut bad = good.clone();
        bad[40..42].copy_from_slice(&4i16.to_le_bytes());
        assert!(matches!(parse_nifti(&bad, no_pair), Err(Error::TooManyDims(4))));
    }

    #[test]
    fn integer_types_and_scaling() {
        let mut bytes = encode_nifti(&[4, 4], &[0.0; 16], None, ByteOrder::Little).unwrap();
        bytes.truncate(VOX_OFFSET);
        bytes[70..72].copy_from_slice(&DT_INT16.to_le_bytes());
        bytes[72..74].copy_from_slice(&16i16.to_le_bytes());
        bytes[112..116].copy_from_slice(&2.0f32.to_le_bytes());
        bytes[116..120].copy_from_slice(&(-1.0f32).to_le_bytes());
        for k in 0..16i16 {
            bytes.extend_from_slice(&(k - 8).to_le_bytes());
        }
        let v = parse_nifti(&bytes, no_pair).unwrap();
        let want: Vec<f64> = (0..16).map(|k| 2.0 * (k as f64 - 8.0) - 1.0).collect();
        assert_eq!(v.data, want);

        bytes.truncate(VOX_OFFSET);
        bytes[70..72].copy_from_slice(&DT_UINT8.to_le_bytes());
        bytes[112..116].copy_from_slice(&0.0f32.to_le_bytes());
        bytes.extend(0u8..16);
        let v = parse_nifti(&bytes, no_pair).unwrap();
        assert_eq!(v.data, (0..16).map(|k| k as f64).collect::<Vec<_>>());
    }

    #[test]
    fn trailing_unit_dims_dropped() {
        let mut bytes = encode_nifti(&[4, 6], &[0.0; 24], None, ByteOrder::Little).unwrap();
        bytes[40..42].copy_from_slice(&3i16.to_le_bytes());
        bytes[46..48].copy_from_slice(&1i16.to_le_bytes());
        let v = parse_nifti(&bytes, no_pair).unwrap();
        assert_eq!(v.meta.dims, vec![4, 6]);
    }

    #[test]
    fn orientation_echoed() {
        let mut meta = VolumeMeta::for_dims(&[4, 6]);
        meta.spacing = vec![0.5, 2.0];
        meta.qform_code = 1;
        meta.sform_code = 2;
        meta.quatern = [0.1, 0.2, 0.3, 10.0, 20.0, 30.0];
        meta.srow = [[1.0, 0.0, 0.0, -5.0], [0.0, 1.0, 0.0, 6.0], [0.0, 0.0, 1.0, 7.0]];
        let bytes = encode_nifti(&[4, 6], &[0.0; 24], Some(&meta), ByteOrder::Big).unwrap();
        let v = parse_nifti(&bytes, no_pair).unwrap();
        assert_eq!(v.meta.spacing, meta.spacing);
        assert_eq!(v.meta.quatern, meta.quatern);
        assert_eq!(v.meta.srow, meta.srow);
        assert_eq!((v.meta.qform_code, v.meta.sform_code), (1, 2));
    }
}
