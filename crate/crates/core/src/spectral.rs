//! Discrete Fourier transforms, centered shifts, band cropping and padding,
//! and the zero-pad + inverse-DFT decoder that turns a low-resolution field
//! into a strictly band-limited full-resolution field.
//!
//! Transform convention: the forward transform is the unnormalized sum
//! `C[k] = Σ_x f[x]·exp(-2πi·Σ_d k_d x_d / m_d)` and the inverse carries the
//! `1 / Π m_d` factor. Any multi-axis transform here is the composition of
//! one-dimensional transforms along each axis.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::grid::{strides, CropWindow, DenseField, GridSpec, LowResField};
use crate::grid::{unravel, BandSpectrum};

/// Relative imaginary residual above which [`idft`] refuses to return a real
/// field.
pub const IMAG_RESIDUAL_TOL: f64 = 1e-6;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place unnormalized N-D FFT over a row-major buffer.
pub(crate) fn fft_nd(dims: &[usize], data: &mut [Complex64], inverse: bool) {
    debug_assert_eq!(data.len(), dims.iter().product::<usize>());
    let st = strides(dims);
    let total = data.len();
    for (axis, &m) in dims.iter().enumerate() {
        if m <= 1 {
            continue;
        }
        let fft = PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            if inverse {
                p.plan_fft_inverse(m)
            } else {
                p.plan_fft_forward(m)
            }
        });
        let stride = st[axis];
        if stride == 1 {
            fft.process(data);
            continue;
        }
        let mut lane = vec![Complex64::new(0.0, 0.0); m];
        let block = stride * m;
        for outer in (0..total).step_by(block) {
            for inner in 0..stride {
                let base = outer + inner;
                for (t, v) in lane.iter_mut().enumerate() {
                    *v = data[base + t * stride];
                }
                fft.process(&mut lane);
                for (t, v) in lane.iter().enumerate() {
                    data[base + t * stride] = *v;
                }
            }
        }
    }
}

/// Rotates every axis by half its extent. For even extents this is an
/// involution mapping corner layout to centered layout and back.
pub fn rotate_half<T: Copy>(dims: &[usize], data: &[T]) -> Vec<T> {
    let mut out = data.to_vec();
    for (flat, v) in data.iter().enumerate() {
        let idx = unravel(dims, flat);
        let dst = idx
            .iter()
            .zip(dims)
            .fold(0, |acc, (&i, &m)| acc * m + (i + m / 2) % m);
        out[dst] = *v;
    }
    out
}

fn to_complex(lane: &[f64]) -> Vec<Complex64> {
    lane.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// Where the zero-frequency bin sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// DC at index 0 along each axis.
    Corner,
    /// DC at `dims / 2` along each axis.
    Centered,
}

/// Full-grid spectrum of one or more lanes.
#[derive(Debug, Clone, PartialEq)]
pub struct FullSpectrum {
    grid: GridSpec,
    layout: Layout,
    channels: Vec<Vec<Complex64>>,
}

impl FullSpectrum {
    pub fn new(grid: GridSpec, layout: Layout, channels: Vec<Vec<Complex64>>) -> Result<Self> {
        if channels.is_empty() || channels.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::ShapeMismatch(
                "spectrum channels do not match grid".into(),
            ));
        }
        Ok(Self {
            grid,
            layout,
            channels,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn channels(&self) -> &[Vec<Complex64>] {
        &self.channels
    }

    pub fn channel(&self, c: usize) -> &[Complex64] {
        &self.channels[c]
    }

    pub fn into_channels(self) -> Vec<Vec<Complex64>> {
        self.channels
    }
}

/// Forward DFT of every channel of a dense field (corner layout).
pub fn dft(field: &DenseField) -> FullSpectrum {
    let channels = field
        .channels()
        .iter()
        .map(|lane| dft_raw(field.grid().dims(), lane))
        .collect();
    FullSpectrum {
        grid: field.grid().clone(),
        layout: Layout::Corner,
        channels,
    }
}

/// Forward DFT of a single real lane (corner layout).
pub fn dft_lane(grid: &GridSpec, lane: &[f64]) -> Result<FullSpectrum> {
    if lane.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "lane of {} values for a grid of {} voxels",
            lane.len(),
            grid.len()
        )));
    }
    Ok(FullSpectrum {
        grid: grid.clone(),
        layout: Layout::Corner,
        channels: vec![dft_raw(grid.dims(), lane)],
    })
}

fn dft_raw(dims: &[usize], lane: &[f64]) -> Vec<Complex64> {
    let mut buf = to_complex(lane);
    fft_nd(dims, &mut buf, false);
    buf
}

/// Real lanes recovered by [`idft`], with the largest discarded imaginary
/// magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct RealLanes {
    pub lanes: Vec<Vec<f64>>,
    pub imag_residual: f64,
}

/// Normalized inverse DFT of a corner-layout spectrum, keeping the real part.
///
/// Fails when the imaginary residual exceeds [`IMAG_RESIDUAL_TOL`] relative to
/// the real magnitude, which only happens for spectra without Hermitian
/// symmetry.
pub fn idft(spec: &FullSpectrum) -> Result<RealLanes> {
    if spec.layout != Layout::Corner {
        return Err(Error::InvalidParameter(
            "idft expects a corner-layout spectrum".into(),
        ));
    }
    let dims = spec.grid.dims();
    let scale = 1.0 / spec.grid.len() as f64;
    let mut lanes = Vec::with_capacity(spec.channels.len());
    let mut residual = 0.0_f64;
    let mut max_real = 0.0_f64;
    for ch in &spec.channels {
        let mut buf = ch.clone();
        fft_nd(dims, &mut buf, true);
        let lane: Vec<f64> = buf
            .iter()
            .map(|c| {
                residual = residual.max((c.im * scale).abs());
                let r = c.re * scale;
                max_real = max_real.max(r.abs());
                r
            })
            .collect();
        lanes.push(lane);
    }
    let tolerance = IMAG_RESIDUAL_TOL * (max_real + 1e-12);
    if residual > tolerance {
        return Err(Error::NonHermitian {
            residual,
            tolerance,
        });
    }
    Ok(RealLanes {
        lanes,
        imag_residual: residual,
    })
}

/// Moves DC from the corner to the center of every axis.
pub fn shift_center(spec: &FullSpectrum) -> FullSpectrum {
    rotate_spectrum(spec, Layout::Centered)
}

/// Moves DC from the center back to the corner of every axis.
pub fn unshift_center(spec: &FullSpectrum) -> FullSpectrum {
    rotate_spectrum(spec, Layout::Corner)
}

fn rotate_spectrum(spec: &FullSpectrum, layout: Layout) -> FullSpectrum {
    FullSpectrum {
        grid: spec.grid.clone(),
        layout,
        channels: spec
            .channels
            .iter()
            .map(|c| rotate_half(spec.grid.dims(), c))
            .collect(),
    }
}

/// Whether a centered band index lies on a Nyquist row/column/plane.
fn is_nyquist(band_dims: &[usize], flat: usize) -> bool {
    unravel(band_dims, flat).contains(&0)
}

fn zero_nyquist(band_dims: &[usize], lane: &mut [Complex64]) {
    for (f, v) in lane.iter_mut().enumerate() {
        if is_nyquist(band_dims, f) {
            *v = Complex64::new(0.0, 0.0);
        }
    }
}

/// Flat full-grid centered offset of each band entry.
fn window_offsets(window: &CropWindow) -> Vec<usize> {
    let full = window.parent().dims();
    let off = window.offsets();
    (0..window.band_len())
        .map(|f| {
            unravel(window.band_dims(), f)
                .iter()
                .zip(&off)
                .zip(full)
                .fold(0, |acc, ((&i, &o), &m)| acc * m + i + o)
        })
        .collect()
}

/// Extracts the centered window and zeroes its Nyquist entries.
pub fn crop_center(spec: &FullSpectrum, window: &CropWindow) -> Result<BandSpectrum> {
    if spec.layout != Layout::Centered {
        return Err(Error::InvalidParameter(
            "crop_center expects a centered spectrum".into(),
        ));
    }
    if spec.grid != *window.parent() {
        return Err(Error::ShapeMismatch(
            "spectrum grid differs from window parent".into(),
        ));
    }
    let offsets = window_offsets(window);
    let channels = spec
        .channels
        .iter()
        .map(|c| {
            let mut lane: Vec<Complex64> = offsets.iter().map(|&o| c[o]).collect();
            zero_nyquist(window.band_dims(), &mut lane);
            lane
        })
        .collect();
    BandSpectrum::new(window.clone(), channels)
}

/// Embeds a band into an all-zero centered spectrum of the parent grid.
pub fn pad_center(band: &BandSpectrum) -> Result<FullSpectrum> {
    let window = band.window();
    let bd = window.band_dims();
    let nyquist_clean = band.channels().iter().all(|c| {
        c.iter()
            .enumerate()
            .all(|(f, v)| !is_nyquist(bd, f) || (v.re == 0.0 && v.im == 0.0))
    });
    if !nyquist_clean {
        return Err(Error::NyquistNotZero);
    }
    let offsets = window_offsets(window);
    let n = window.parent().len();
    let channels = band
        .channels()
        .iter()
        .map(|c| {
            let mut full = vec![Complex64::new(0.0, 0.0); n];
            for (&o, v) in offsets.iter().zip(c) {
                full[o] = *v;
            }
            full
        })
        .collect();
    FullSpectrum::new(window.parent().clone(), Layout::Centered, channels)
}

/// Centered, Nyquist-zeroed DFT of a low-resolution field on its band grid.
pub fn band_spectrum(s: &LowResField) -> BandSpectrum {
    let window = s.window();
    let bd = window.band_dims();
    let channels = s
        .channels()
        .iter()
        .map(|lane| {
            let mut lane = rotate_half(bd, &dft_raw(bd, lane));
            zero_nyquist(bd, &mut lane);
            lane
        })
        .collect();
    BandSpectrum::new(window.clone(), channels).expect("shapes follow window")
}

/// Result of [`decode_detailed`].
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub field: DenseField,
    pub imag_residual: f64,
}

/// Model-driven decoder: band spectrum of `s`, zero-padded to the full grid,
/// shifted to corner layout, inverse transformed and multiplied by the gain
/// `a·b[·c]`. A constant `s = c` decodes to the constant displacement `c`.
pub fn decode(s: &LowResField) -> Result<DenseField> {
    decode_detailed(s).map(|d| d.field)
}

pub fn decode_detailed(s: &LowResField) -> Result<Decoded> {
    let window = s.window();
    let padded = pad_center(&band_spectrum(s))?;
    let RealLanes {
        mut lanes,
        imag_residual,
    } = idft(&unshift_center(&padded))?;
    let gain = window.gain();
    for lane in &mut lanes {
        lane.iter_mut().for_each(|v| *v *= gain);
    }
    Ok(Decoded {
        field: DenseField::new(window.parent().clone(), lanes)?,
        imag_residual: imag_residual * gain,
    })
}

/// Output of [`encode`].
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    /// Centered, Nyquist-zeroed window of the full DFT.
    pub band: BandSpectrum,
    /// Low-resolution field in the decoder's gain convention:
    /// `decode(low_res)` reproduces the band-limited part of the input.
    pub low_res: LowResField,
    /// Small-grid inverse DFT of the band, unscaled. Equals
    /// `gain · φ` at the subsampled positions of a band-limited `φ`.
    pub raw_low_res: LowResField,
    /// Largest imaginary magnitude dropped from `raw_low_res`.
    pub imag_residual: f64,
    /// Fraction of spectral energy outside the retained band, in `[0, 1]`.
    pub discarded_energy_fraction: f64,
}

/// Band-limiting transform: DFT of the full field, centered crop with Nyquist
/// zeroing, then the small-grid inverse DFT of the cropped band.
pub fn encode(phi: &DenseField, window: &CropWindow) -> Result<Encoded> {
    if phi.grid() != window.parent() {
        return Err(Error::ShapeMismatch(
            "field grid differs from window parent".into(),
        ));
    }
    let spec = shift_center(&dft(phi));
    let band = crop_center(&spec, window)?;
    let total_energy: f64 = spec.channels.iter().flatten().map(|c| c.norm_sqr()).sum();
    let kept_energy: f64 = band.channels().iter().flatten().map(|c| c.norm_sqr()).sum();
    let bd = window.band_dims();
    let scale = 1.0 / window.band_len() as f64;
    let mut residual = 0.0_f64;
    let mut raw = Vec::with_capacity(band.channels().len());
    for c in band.channels() {
        let mut buf = rotate_half(bd, c);
        fft_nd(bd, &mut buf, true);
        raw.push(
            buf.iter()
                .map(|z| {
                    residual = residual.max((z.im * scale).abs());
                    z.re * scale
                })
                .collect::<Vec<f64>>(),
        );
    }
    let gain = window.gain();
    let low = raw
        .iter()
        .map(|lane| lane.iter().map(|v| v / gain).collect())
        .collect();
    let discarded = if total_energy > 0.0 {
        ((total_energy - kept_energy) / total_energy).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(Encoded {
        band,
        low_res: LowResField::new(window.clone(), low)?,
        raw_low_res: LowResField::new(window.clone(), raw)?,
        imag_residual: residual,
        discarded_energy_fraction: discarded,
    })
}

/// Transpose of the linear map [`decode`], for back-propagating a gradient
/// with respect to the dense field onto the low-resolution parameters.
pub fn decode_adjoint(g: &DenseField, window: &CropWindow) -> Result<LowResField> {
    if g.grid() != window.parent() {
        return Err(Error::ShapeMismatch(
            "gradient grid differs from window parent".into(),
        ));
    }
    let scale = window.gain() / window.parent().len() as f64;
    let mut spec = dft(g);
    spec.channels
        .iter_mut()
        .flatten()
        .for_each(|c| *c *= scale);
    let band = crop_center(&shift_center(&spec), window)?;
    let bd = window.band_dims();
    let channels = band
        .channels()
        .iter()
        .map(|c| {
            let mut buf = rotate_half(bd, c);
            fft_nd(bd, &mut buf, true);
            buf.iter().map(|z| z.re).collect()
        })
        .collect();
    LowResField::new(window.clone(), channels)
}

/// Spectral leakage of a dense field outside a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandLeakage {
    /// Largest out-of-window magnitude over the largest magnitude anywhere.
    pub max_ratio: f64,
    /// Out-of-window spectral energy over total energy.
    pub energy_fraction: f64,
}

/// Measures how far a field is from being band-limited to `window`. Nyquist
/// entries of the window count as outside.
pub fn band_leakage(field: &DenseField, window: &CropWindow) -> Result<BandLeakage> {
    if field.grid() != window.parent() {
        return Err(Error::ShapeMismatch(
            "field grid differs from window parent".into(),
        ));
    }
    let spec = shift_center(&dft(field));
    let mut inside = vec![false; window.parent().len()];
    let bd = window.band_dims();
    for (f, &o) in window_offsets(window).iter().enumerate() {
        inside[o] = !is_nyquist(bd, f);
    }
    let (mut max_all, mut max_out, mut e_all, mut e_out) = (0.0_f64, 0.0_f64, 0.0, 0.0);
    for c in &spec.channels {
        for (z, &ins) in c.iter().zip(&inside) {
            let m = z.norm();
            max_all = max_all.max(m);
            e_all += m * m;
            if !ins {
                max_out = max_out.max(m);
                e_out += m * m;
            }
        }
    }
    Ok(BandLeakage {
        max_ratio: if max_all > 0.0 { max_out / max_all } else { 0.0 },
        energy_fraction: if e_all > 0.0 { e_out / e_all } else { 0.0 },
    })
}
