//! Raw field format: a TOML manifest next to one headerless little-endian
//! payload file per channel.
//!
//! ```toml
//! kind = "dense"            # or "lowres"
//! dims = [64, 96]           # full grid
//! band_dims = [16, 24]      # lowres only
//! channels = 2
//! dtype = "float64"         # or "float32"
//! byte_order = "little"
//! payload = ["phi.c0.bin", "phi.c1.bin"]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CropWindow, DenseField, GridSpec, LowResField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Dense,
    Lowres,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawDtype {
    #[default]
    Float32,
    Float64,
}

impl RawDtype {
    fn width(self) -> usize {
        match self {
            RawDtype::Float32 => 4,
            RawDtype::Float64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldManifest {
    pub kind: FieldKind,
    pub dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_dims: Option<Vec<usize>>,
    pub channels: usize,
    pub dtype: RawDtype,
    pub byte_order: String,
    /// Payload files, relative to the manifest's directory.
    pub payload: Vec<String>,
}

/// Either kind of vector field.
#[derive(Debug, Clone)]
pub enum FieldData {
    Dense(DenseField),
    LowRes(LowResField),
}

impl FieldData {
    pub fn channels(&self) -> &[Vec<f64>] {
        match self {
            FieldData::Dense(f) => f.channels(),
            FieldData::LowRes(s) => s.channels(),
        }
    }

    pub fn into_dense(self) -> Result<DenseField> {
        match self {
            FieldData::Dense(f) => Ok(f),
            FieldData::LowRes(_) => Err(Error::Manifest("expected a dense field, found a low-resolution one".into())),
        }
    }

    pub fn into_low_res(self) -> Result<LowResField> {
        match self {
            FieldData::LowRes(s) => Ok(s),
            FieldData::Dense(_) => Err(Error::Manifest("expected a low-resolution field, found a dense one".into())),
        }
    }
}

impl From<DenseField> for FieldData {
    fn from(f: DenseField) -> Self {
        FieldData::Dense(f)
    }
}

impl From<LowResField> for FieldData {
    fn from(s: LowResField) -> Self {
        FieldData::LowRes(s)
    }
}

fn payload_name(manifest: &Path, c: usize) -> String {
    let stem = manifest
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "field".into());
    format!("{stem}.c{c}.bin")
}

/// Writes the manifest at `path` and the payloads beside it.
pub fn write_field(path: impl AsRef<Path>, field: &FieldData, dtype: RawDtype) -> Result<()> {
    let path = path.as_ref();
    let (kind, dims, band_dims) = match field {
        FieldData::Dense(f) => (FieldKind::Dense, f.grid().dims().to_vec(), None),
        FieldData::LowRes(s) => (
            FieldKind::Lowres,
            s.window().parent().dims().to_vec(),
            Some(s.window().band_dims().to_vec()),
        ),
    };
    let channels = field.channels();
    let manifest = FieldManifest {
        kind,
        dims,
        band_dims,
        channels: channels.len(),
        dtype,
        byte_order: "little".into(),
        payload: (0..channels.len()).map(|c| payload_name(path, c)).collect(),
    };
    let dir = path.parent().unwrap_or(Path::new(""));
    for (lane, name) in channels.iter().zip(&manifest.payload) {
        let mut bytes = Vec::with_capacity(lane.len() * dtype.width());
        for &v in lane {
            match dtype {
                RawDtype::Float32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
                RawDtype::Float64 => bytes.extend_from_slice(&v.to_le_bytes()),
            }
        }
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(p, e))?;
    }
    let text = toml::to_string(&manifest).map_err(|e| Error::Manifest(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<FieldManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))
}

pub fn read_field(path: impl AsRef<Path>) -> Result<FieldData> {
    let path = path.as_ref();
    let m = read_manifest(path)?;
    if m.byte_order != "little" {
        return Err(Error::Manifest(format!("unsupported byte order {:?}", m.byte_order)));
    }
    let grid = GridSpec::new(&m.dims)?;
    if m.channels != grid.ndim() {
        return Err(Error::Manifest(format!(
            "{} channels for a {}-axis grid",
            m.channels,
            grid.ndim()
        )));
    }
    if m.payload.len() != m.channels {
        return Err(Error::Manifest(format!(
            "{} payload files for {} channels",
            m.payload.len(),
            m.channels
        )));
    }
    let window = match (m.kind, &m.band_dims) {
        (FieldKind::Dense, _) => None,
        (FieldKind::Lowres, Some(b)) => Some(CropWindow::new(&grid, b)?),
        (FieldKind::Lowres, None) => return Err(Error::Manifest("lowres field without band_dims".into())),
    };
    let count = window.as_ref().map_or(grid.len(), |w| w.band_len());
    let dir = path.parent().unwrap_or(Path::new(""));
    let mut channels = Vec::with_capacity(m.channels);
    for name in &m.payload {
        let p: PathBuf = dir.join(name);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let expected = count * m.dtype.width();
        if bytes.len() != expected {
            return Err(Error::Manifest(format!(
                "{}: payload has {} bytes, manifest implies {expected}",
                p.display(),
                bytes.len()
            )));
        }
        let lane: Vec<f64> = match m.dtype {
            RawDtype::Float32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4")) as f64)
                .collect(),
            RawDtype::Float64 => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8")))
                .collect(),
        };
        channels.push(lane);
    }
    Ok(match window {
        None => FieldData::Dense(DenseField::new(grid, channels)?),
        Some(w) => FieldData::LowRes(LowResField::new(w, channels)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, make_window};

    #[test]
    fn dense_and_low_res_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = make_grid(&[8, 12]).unwrap();
        let phi = DenseField::from_fn(g.clone(), |c, x| (x[0] * 7 + x[1]) as f64 * 0.1 - c as f64 / 3.0).unwrap();
        let p = dir.path().join("phi.toml");
        write_field(&p, &phi.clone().into(), RawDtype::Float64).unwrap();
        let back = read_field(&p).unwrap().into_dense().unwrap();
        assert_eq!(back.channels(), phi.channels());

        let w = make_window(&g, &[4, 6]).unwrap();
        let s = LowResField::new(w, vec![(0..24).map(|k| k as f64 * 0.25).collect(); 2]).unwrap();
        let p = dir.path().join("s.toml");
        write_field(&p, &s.clone().into(), RawDtype::Float32).unwrap();
        let back = read_field(&p).unwrap().into_low_res().unwrap();
        assert_eq!(back.channels(), s.channels());
        assert_eq!(back.window().band_dims(), &[4, 6]);
    }

    #[test]
    fn rejects_bad_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let g = make_grid(&[4, 4]).unwrap();
        let p = dir.path().join("f.toml");
        write_field(&p, &DenseField::zeros(g).into(), RawDtype::Float32).unwrap();

        let text = fs::read_to_string(&p).unwrap();
        fs::write(&p, text.replace("channels = 2", "channels = 3")).unwrap();
        assert!(matches!(read_field(&p), Err(Error::Manifest(_))));
        fs::write(&p, &text).unwrap();

        fs::write(dir.path().join("f.c1.bin"), b"").unwrap();
        assert!(matches!(read_field(&p), Err(Error::Manifest(_))));
    }
}
