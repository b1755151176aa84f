//! Portable graymap (P5) and pixmap (P6) renders of slices, deformation grids
//! and spectra. Rows of the picture run along the first in-plane axis, columns
//! along the second.

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{min_max, DenseField, ScalarImage};
use crate::spectral::{fft_nd, rotate_half};

/// Gray level used when a slice has no dynamic range.
pub const FLAT_GRAY: u8 = 128;
pub const BACKGROUND: [u8; 3] = [255, 255, 255];
pub const LINE: [u8; 3] = [20, 20, 20];

/// A 2D cut through a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub rows: usize,
    pub cols: usize,
    /// Grid axes spanning the rows and the columns.
    pub axes: (usize, usize),
    pub values: Vec<f64>,
}

/// Selects the plane `x[axis] = index` of a 3D lane; 2D lanes are returned
/// whole and `axis`/`index` are ignored.
pub fn extract_slice(dims: &[usize], lane: &[f64], axis: usize, index: usize) -> Result<Slice> {
    if dims.len() == 2 {
        return Ok(Slice {
            rows: dims[0],
            cols: dims[1],
            axes: (0, 1),
            values: lane.to_vec(),
        });
    }
    if axis >= dims.len() {
        return Err(Error::InvalidParameter(format!("slice axis {axis} out of range for {} axes", dims.len())));
    }
    if index >= dims[axis] {
        return Err(Error::InvalidParameter(format!(
            "slice index {index} out of range for axis {axis} of extent {}",
            dims[axis]
        )));
    }
    let axes: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
    let (rows, cols) = (dims[axes[0]], dims[axes[1]]);
    let mut values = Vec::with_capacity(rows * cols);
    let mut x = [0usize; 3];
    x[axis] = index;
    for r in 0..rows {
        for c in 0..cols {
            x[axes[0]] = r;
            x[axes[1]] = c;
            values.push(lane[(x[0] * dims[1] + x[1]) * dims[2] + x[2]]);
        }
    }
    Ok(Slice { rows, cols, axes: (axes[0], axes[1]), values })
}

/// Min-max normalization to 8 bits; a flat input maps to [`FLAT_GRAY`].
pub fn to_gray(values: &[f64]) -> Vec<u8> {
    let (lo, hi) = min_max(values);
    if !(hi > lo) {
        return vec![FLAT_GRAY; values.len()];
    }
    values
        .iter()
        .map(|&v| ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

pub fn encode_pgm(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn encode_ppm(rows: usize, cols: usize, rgb: &[[u8; 3]]) -> Vec<u8> {
    let mut out = format!("P6\n{cols} {rows}\n255\n").into_bytes();
    out.extend(rgb.iter().flatten());
    out
}

fn write(path: &Path, bytes: Vec<u8>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn slice_pgm(image: &ScalarImage, axis: usize, index: usize) -> Result<Vec<u8>> {
    let s = extract_slice(image.grid().dims(), image.values(), axis, index)?;
    Ok(encode_pgm(s.rows, s.cols, &to_gray(&s.values)))
}

/// Min-max normalized graymap of one slice.
pub fn render_slice(image: &ScalarImage, axis: usize, index: usize, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), slice_pgm(image, axis, index)?)
}

fn sample_clamped(s: &Slice, r: f64, c: f64) -> f64 {
    let r = r.clamp(0.0, (s.rows - 1) as f64);
    let c = c.clamp(0.0, (s.cols - 1) as f64);
    let (r0, c0) = (r.floor() as usize, c.floor() as usize);
    let (r1, c1) = ((r0 + 1).min(s.rows - 1), (c0 + 1).min(s.cols - 1));
    let (fr, fc) = (r - r0 as f64, c - c0 as f64);
    let at = |i: usize, j: usize| s.values[i * s.cols + j];
    (1.0 - fr) * ((1.0 - fc) * at(r0, c0) + fc * at(r0, c1)) + fr * ((1.0 - fc) * at(r1, c0) + fc * at(r1, c1))
}

fn plot(canvas: &mut [[u8; 3]], rows: usize, cols: usize, r: f64, c: f64) {
    let (r, c) = (r.round(), c.round());
    if r >= 0.0 && c >= 0.0 && (r as usize) < rows && (c as usize) < cols {
        canvas[r as usize * cols + c as usize] = LINE;
    }
}

/// Draws a polyline through consecutive points, filling gaps between samples.
fn draw_curve(canvas: &mut [[u8; 3]], rows: usize, cols: usize, points: &[(f64, f64)]) {
    for pair in points.windows(2) {
        let ((r0, c0), (r1, c1)) = (pair[0], pair[1]);
        let n = (r1 - r0).abs().max((c1 - c0).abs()).ceil().max(1.0) as usize;
        for k in 0..=n {
            let t = k as f64 / n as f64;
            plot(canvas, rows, cols, r0 + t * (r1 - r0), c0 + t * (c1 - c0));
        }
    }
}

/// Samples per voxel along each grid curve.
const CURVE_DENSITY: usize = 4;

pub fn grid_ppm(phi: &DenseField, stride: usize, axis: usize, index: usize) -> Result<Vec<u8>> {
    if stride < 2 {
        return Err(Error::InvalidParameter(format!("grid stride must be at least 2, got {stride}")));
    }
    let dims = phi.grid().dims();
    let probe = extract_slice(dims, phi.channel(0), axis, index)?;
    let (ar, ac) = probe.axes;
    let du = extract_slice(dims, phi.channel(ar), axis, index)?;
    let dv = extract_slice(dims, phi.channel(ac), axis, index)?;
    let (rows, cols) = (du.rows, du.cols);
    let mut canvas = vec![BACKGROUND; rows * cols];
    let deformed = |r: f64, c: f64| (r + sample_clamped(&du, r, c), c + sample_clamped(&dv, r, c));

    for r in (0..rows).step_by(stride) {
        let pts: Vec<_> = (0..=(cols - 1) * CURVE_DENSITY)
            .map(|k| deformed(r as f64, k as f64 / CURVE_DENSITY as f64))
            .collect();
        draw_curve(&mut canvas, rows, cols, &pts);
    }
    for c in (0..cols).step_by(stride) {
        let pts: Vec<_> = (0..=(rows - 1) * CURVE_DENSITY)
            .map(|k| deformed(k as f64 / CURVE_DENSITY as f64, c as f64))
            .collect();
        draw_curve(&mut canvas, rows, cols, &pts);
    }
    Ok(encode_ppm(rows, cols, &canvas))
}

/// Draws the lines `row = k·stride` and `col = k·stride` of the selected slice
/// after mapping them through `Id + phi`.
pub fn render_grid(phi: &DenseField, stride: usize, axis: usize, index: usize, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), grid_ppm(phi, stride, axis, index)?)
}

/// `log(1 + |C|)` of the slice's 2D spectrum, zero frequency at the center.
pub fn log_spectrum(field: &DenseField, channel: usize, axis: usize, index: usize) -> Result<Slice> {
    if channel >= field.channels().len() {
        return Err(Error::InvalidParameter(format!(
            "channel {channel} out of range for {} channels",
            field.channels().len()
        )));
    }
    let s = extract_slice(field.grid().dims(), field.channel(channel), axis, index)?;
    let dims = [s.rows, s.cols];
    let mut data: Vec<Complex64> = s.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(&dims, &mut data, false);
    let centered = rotate_half(&dims, &data);
    Ok(Slice {
        values: centered.iter().map(|c| c.norm().ln_1p()).collect(),
        ..s
    })
}

pub fn spectrum_pgm(field: &DenseField, channel: usize, axis: usize, index: usize) -> Result<Vec<u8>> {
    let s = log_spectrum(field, channel, axis, index)?;
    Ok(encode_pgm(s.rows, s.cols, &to_gray(&s.values)))
}

pub fn render_spectrum(
    field: &DenseField,
    channel: usize,
    axis: usize,
    index: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    write(path.as_ref(), spectrum_pgm(field, channel, axis, index)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, make_window, LowResField};
    use crate::spectral::decode;

    fn payload(bytes: &[u8]) -> &[u8] {
        // Three header lines.
        let mut seen = 0;
        let at = bytes.iter().position(|&b| {
            seen += (b == b'\n') as usize;
            seen == 3
        });
        &bytes[at.unwrap() + 1..]
    }

    #[test]
    fn constant_image_is_gray() {
        let img = ScalarImage::from_fn(make_grid(&[4, 6]).unwrap(), |_| 3.5).unwrap();
        let bytes = slice_pgm(&img, 0, 0).unwrap();
        assert!(bytes.starts_with(b"P5\n6 4\n255\n"));
        assert!(payload(&bytes).iter().all(|&p| p == FLAT_GRAY));
    }

    #[test]
    fn two_d_ignores_axis_and_index() {
        let img = ScalarImage::from_fn(make_grid(&[4, 6]).unwrap(), |x| (x[0] * 6 + x[1]) as f64).unwrap();
        assert_eq!(slice_pgm(&img, 0, 0).unwrap(), slice_pgm(&img, 2, 99).unwrap());
        let p = slice_pgm(&img, 0, 0).unwrap();
        assert_eq!(payload(&p)[0], 0);
        assert_eq!(payload(&p)[23], 255);
    }

    #[test]
    fn three_d_slice_and_range_check() {
        let img = ScalarImage::from_fn(make_grid(&[4, 6, 8]).unwrap(), |x| (x[0] * 100 + x[1] * 10 + x[2]) as f64).unwrap();
        let s = extract_slice(img.grid().dims(), img.values(), 1, 2).unwrap();
        assert_eq!((s.rows, s.cols, s.axes), (4, 8, (0, 2)));
        assert_eq!(s.values[8 + 3], 123.0);
        assert!(slice_pgm(&img, 1, 6).is_err());
        assert!(slice_pgm(&img, 3, 0).is_err());
    }

    fn dark(bytes: &[u8]) -> Vec<bool> {
        payload(bytes).chunks(3).map(|p| p == LINE).collect()
    }

    #[test]
    fn zero_field_draws_rectilinear_grid() {
        let phi = DenseField::zeros(make_grid(&[8, 12]).unwrap());
        let bytes = grid_ppm(&phi, 4, 0, 0).unwrap();
        assert!(bytes.starts_with(b"P6\n12 8\n255\n"));
        let d = dark(&bytes);
        for r in 0..8 {
            for c in 0..12 {
                assert_eq!(d[r * 12 + c], r % 4 == 0 || c % 4 == 0, "({r},{c})");
            }
        }
        assert!(grid_ppm(&phi, 1, 0, 0).is_err());
    }

    #[test]
    fn shift_translates_grid() {
        let g = make_grid(&[8, 12]).unwrap();
        let phi = DenseField::constant(g, &[1.0, 2.0]).unwrap();
        let d = dark(&grid_ppm(&phi, 4, 0, 0).unwrap());
        for r in 0..8 {
            for c in 0..12 {
                let want = (r % 4 == 1 && c >= 2) || (c % 4 == 2 && r >= 1);
                assert_eq!(d[r * 12 + c], want, "({r},{c})");
            }
        }
    }

    #[test]
    fn spectrum_confined_to_band() {
        let g = make_grid(&[16, 24]).unwrap();
        let w = make_window(&g, &[4, 6]).unwrap();
        let s = LowResField::new(w.clone(), vec![(0..24).map(|k| ((k * 37) % 11) as f64 - 5.0).collect(); 2]).unwrap();
        let phi = decode(&s).unwrap();
        let bytes = spectrum_pgm(&phi, 1, 0, 0).unwrap();
        let p = payload(&bytes);
        for (f, &v) in p.iter().enumerate() {
            let (r, c) = (f / 24, f % 24);
            if !w.contains_centered(&[r, c]) {
                assert_eq!(v, 0, "({r},{c})");
            }
        }
        assert!(p.iter().any(|&v| v == 255));
    }

    #[test]
    fn spectrum_of_zero_and_dc() {
        let g = make_grid(&[8, 8]).unwrap();
        let zero = spectrum_pgm(&DenseField::zeros(g.clone()), 0, 0, 0).unwrap();
        assert!(payload(&zero).iter().all(|&p| p == FLAT_GRAY));
        let dc = spectrum_pgm(&DenseField::constant(g, &[2.0, 0.0]).unwrap(), 0, 0, 0).unwrap();
        let p = payload(&dc);
        for (f, &v) in p.iter().enumerate() {
            assert_eq!(v, if f == 4 * 8 + 4 { 255 } else { 0 });
        }
    }
}
