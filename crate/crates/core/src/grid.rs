//! Grid containers and shape bookkeeping.
//!
//! Every buffer is stored row-major: axis 0 varies slowest and the last axis
//! is contiguous. A 2D grid `(M, N)` stores voxel `(i, j)` at `i * N + j`; a 3D
//! grid `(M, N, P)` stores `(i, j, k)` at `(i * N + j) * P + k`. Voxel spacing
//! is 1 along every axis and all displacements are in voxel units.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Smallest legal extent of a full-resolution grid axis.
pub const MIN_EXTENT: usize = 4;

/// Full-resolution spatial grid: 2 or 3 even extents, each at least 4.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridSpec {
    dims: Vec<usize>,
}

impl GridSpec {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) {
            return Err(Error::WrongDimensionality(dims.len()));
        }
        for (axis, &extent) in dims.iter().enumerate() {
            if extent % 2 != 0 {
                return Err(Error::OddExtent { axis, extent });
            }
            if extent < MIN_EXTENT {
                return Err(Error::ExtentTooSmall {
                    axis,
                    extent,
                    min: MIN_EXTENT,
                });
            }
        }
        Ok(Self {
            dims: dims.to_vec(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    /// Number of voxels.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.dims)
    }

    /// Multi-index of a flat offset.
    pub fn unravel(&self, flat: usize) -> Vec<usize> {
        unravel(&self.dims, flat)
    }

    pub fn ravel(&self, index: &[usize]) -> usize {
        ravel(&self.dims, index)
    }
}

/// Shorthand for [`GridSpec::new`].
pub fn make_grid(dims: &[usize]) -> Result<GridSpec> {
    GridSpec::new(dims)
}

pub(crate) fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for d in (0..dims.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * dims[d + 1];
    }
    s
}

pub(crate) fn unravel(dims: &[usize], mut flat: usize) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    for d in (0..dims.len()).rev() {
        idx[d] = flat % dims[d];
        flat /= dims[d];
    }
    idx
}

pub(crate) fn ravel(dims: &[usize], index: &[usize]) -> usize {
    index
        .iter()
        .zip(dims)
        .fold(0, |acc, (&i, &m)| acc * m + i)
}

/// Centered low-frequency window of a grid's spectrum.
///
/// Along an axis of parent extent `m` and band extent `m_c` the window covers
/// the centered-layout indices `[m/2 - m_c/2, m/2 + m_c/2)`. Every band extent
/// is even and the per-axis factor `m / m_c` is an even integer, so the window
/// is symmetric around DC apart from the single most-negative (Nyquist) index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CropWindow {
    parent: GridSpec,
    band_dims: Vec<usize>,
    factors: Vec<usize>,
}

impl CropWindow {
    pub fn new(parent: &GridSpec, band_dims: &[usize]) -> Result<Self> {
        if band_dims.len() != parent.ndim() {
            return Err(Error::ShapeMismatch(format!(
                "band has {} axes, grid has {}",
                band_dims.len(),
                parent.ndim()
            )));
        }
        let mut factors = Vec::with_capacity(band_dims.len());
        for (axis, (&band, &grid)) in band_dims.iter().zip(parent.dims()).enumerate() {
            if band % 2 != 0 {
                return Err(Error::OddExtent { axis, extent: band });
            }
            if band < 2 {
                return Err(Error::ExtentTooSmall {
                    axis,
                    extent: band,
                    min: 2,
                });
            }
            if grid % band != 0 {
                return Err(Error::BandNotDivisor { axis, band, grid });
            }
            let factor = grid / band;
            if factor % 2 != 0 {
                return Err(Error::OddFactor {
                    axis,
                    factor,
                    grid,
                    band,
                });
            }
            factors.push(factor);
        }
        Ok(Self {
            parent: parent.clone(),
            band_dims: band_dims.to_vec(),
            factors,
        })
    }

    pub fn parent(&self) -> &GridSpec {
        &self.parent
    }

    pub fn band_dims(&self) -> &[usize] {
        &self.band_dims
    }

    /// Per-axis downsampling factors `(a, b[, c])`.
    pub fn factors(&self) -> &[usize] {
        &self.factors
    }

    /// `Z_a, Z_b[, Z_c]`: half of each factor.
    pub fn half_factors(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f / 2).collect()
    }

    /// Product of the factors, `a·b[·c]`. Also the decoder's gain.
    pub fn gain(&self) -> f64 {
        self.factors.iter().product::<usize>() as f64
    }

    pub fn band_len(&self) -> usize {
        self.band_dims.iter().product()
    }

    pub fn ndim(&self) -> usize {
        self.parent.ndim()
    }

    /// First centered-layout index covered by the window along each axis.
    pub fn offsets(&self) -> Vec<usize> {
        self.parent
            .dims()
            .iter()
            .zip(&self.band_dims)
            .map(|(&m, &mc)| m / 2 - mc / 2)
            .collect()
    }

    /// Whether a centered-layout multi-index lies inside the window.
    pub fn contains_centered(&self, index: &[usize]) -> bool {
        index
            .iter()
            .zip(self.offsets())
            .zip(&self.band_dims)
            .all(|((&i, off), &mc)| i >= off && i < off + mc)
    }

    /// The sampling mask over the full grid in centered layout: 1 inside the
    /// window, 0 elsewhere.
    pub fn mask(&self) -> Vec<u8> {
        (0..self.parent.len())
            .map(|f| u8::from(self.contains_centered(&self.parent.unravel(f))))
            .collect()
    }
}

/// Shorthand for [`CropWindow::new`].
pub fn make_window(grid: &GridSpec, band_dims: &[usize]) -> Result<CropWindow> {
    CropWindow::new(grid, band_dims)
}

fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Scalar intensity image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarImage {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarImage {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a grid of {} voxels",
                values.len(),
                grid.len()
            )));
        }
        check_finite(&values, "image")?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(&[usize]) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(&grid.unravel(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn min_max(&self) -> (f64, f64) {
        min_max(&self.values)
    }
}

pub(crate) fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Full-resolution vector field with one channel per spatial axis. Channel
/// `d` holds the component along axis `d`, in voxels. Used both for
/// displacements and for stationary velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseField {
    grid: GridSpec,
    channels: Vec<Vec<f64>>,
}

impl DenseField {
    pub fn new(grid: GridSpec, channels: Vec<Vec<f64>>) -> Result<Self> {
        if channels.len() != grid.ndim() {
            return Err(Error::ShapeMismatch(format!(
                "{} channels for a {}-D grid",
                channels.len(),
                grid.ndim()
            )));
        }
        for c in &channels {
            if c.len() != grid.len() {
                return Err(Error::ShapeMismatch(format!(
                    "channel of {} values for a grid of {} voxels",
                    c.len(),
                    grid.len()
                )));
            }
            check_finite(c, "dense field")?;
        }
        Ok(Self { grid, channels })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        let channels = vec![vec![0.0; grid.len()]; grid.ndim()];
        Self { grid, channels }
    }

    /// The same vector at every voxel.
    pub fn constant(grid: GridSpec, vector: &[f64]) -> Result<Self> {
        let channels = vector.iter().map(|&v| vec![v; grid.len()]).collect();
        Self::new(grid, channels)
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(usize, &[usize]) -> f64) -> Result<Self> {
        let channels = (0..grid.ndim())
            .map(|c| (0..grid.len()).map(|i| f(c, &grid.unravel(i))).collect())
            .collect();
        Self::new(grid, channels)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Largest vector component magnitude.
    pub fn max_abs(&self) -> f64 {
        self.channels
            .iter()
            .flatten()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Euclidean length of the vector at flat offset `i`.
    pub fn norm_at(&self, i: usize) -> f64 {
        self.channels.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|v| v * alpha).collect())
                .collect(),
        }
    }

    /// Flat inner product over all channels.
    pub fn dot(&self, other: &DenseField) -> f64 {
        dot_lanes(&self.channels, &other.channels)
    }
}

pub(crate) fn dot_lanes(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .sum()
}

/// Real low-resolution field over the band grid of a [`CropWindow`]; the
/// optimizable parameterization of a band-limited dense field.
#[derive(Debug, Clone, PartialEq)]
pub struct LowResField {
    window: CropWindow,
    channels: Vec<Vec<f64>>,
}

impl LowResField {
    pub fn new(window: CropWindow, channels: Vec<Vec<f64>>) -> Result<Self> {
        if channels.len() != window.ndim() {
            return Err(Error::ShapeMismatch(format!(
                "{} channels for a {}-D window",
                channels.len(),
                window.ndim()
            )));
        }
        for c in &channels {
            if c.len() != window.band_len() {
                return Err(Error::ShapeMismatch(format!(
                    "channel of {} values for a band of {} entries",
                    c.len(),
                    window.band_len()
                )));
            }
            check_finite(c, "low-resolution field")?;
        }
        Ok(Self { window, channels })
    }

    pub fn zeros(window: CropWindow) -> Self {
        let channels = vec![vec![0.0; window.band_len()]; window.ndim()];
        Self { window, channels }
    }

    pub fn window(&self) -> &CropWindow {
        &self.window
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// All channels concatenated, the layout used by the optimizer.
    pub fn to_flat(&self) -> Vec<f64> {
        self.channels.concat()
    }

    pub fn from_flat(window: CropWindow, flat: &[f64]) -> Result<Self> {
        let n = window.band_len();
        if flat.len() != n * window.ndim() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for {} channels of {} entries",
                flat.len(),
                window.ndim(),
                n
            )));
        }
        let channels = flat.chunks(n).map(<[f64]>::to_vec).collect();
        Self::new(window, channels)
    }

    pub fn dot(&self, other: &LowResField) -> f64 {
        dot_lanes(&self.channels, &other.channels)
    }
}

/// Complex band-limited coefficients in centered layout (DC at
/// `band_dims / 2`).
#[derive(Debug, Clone, PartialEq)]
pub struct BandSpectrum {
    window: CropWindow,
    channels: Vec<Vec<Complex64>>,
}

impl BandSpectrum {
    pub fn new(window: CropWindow, channels: Vec<Vec<Complex64>>) -> Result<Self> {
        if channels.len() != window.ndim() || channels.iter().any(|c| c.len() != window.band_len())
        {
            return Err(Error::ShapeMismatch(
                "band spectrum channels do not match window".into(),
            ));
        }
        Ok(Self { window, channels })
    }

    pub fn window(&self) -> &CropWindow {
        &self.window
    }

    pub fn channels(&self) -> &[Vec<Complex64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<Complex64>> {
        self.channels
    }
}

/// Integer segmentation volume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    grid: GridSpec,
    values: Vec<u32>,
}

impl LabelMap {
    pub fn new(grid: GridSpec, values: Vec<u32>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for a grid of {} voxels",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    /// Sorted distinct labels, background included.
    pub fn labels(&self) -> Vec<u32> {
        let mut l = self.values.clone();
        l.sort_unstable();
        l.dedup();
        l
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_examples() {
        let g = make_grid(&[160, 192, 224]).unwrap();
        assert_eq!(g.ndim(), 3);
        assert_eq!(g.len(), 160 * 192 * 224);
        assert!(make_grid(&[4, 4]).is_ok());
        let err = make_grid(&[5, 8]).unwrap_err();
        assert_eq!(err.to_string(), "axis 0 extent odd (5)");
        assert!(matches!(
            make_grid(&[8, 2]),
            Err(Error::ExtentTooSmall { axis: 1, .. })
        ));
        assert!(matches!(make_grid(&[8]), Err(Error::WrongDimensionality(1))));
        assert!(matches!(
            make_grid(&[8, 8, 8, 8]),
            Err(Error::WrongDimensionality(4))
        ));
    }

    #[test]
    fn window_examples() {
        let g = make_grid(&[160, 192]).unwrap();
        assert_eq!(make_window(&g, &[40, 48]).unwrap().factors(), &[4, 4]);
        let w = make_window(&g, &[20, 24]).unwrap();
        assert_eq!(w.factors(), &[8, 8]);
        assert_eq!(w.half_factors(), vec![4, 4]);
        assert_eq!(w.gain(), 64.0);
        assert!(matches!(
            make_window(&g, &[30, 48]),
            Err(Error::BandNotDivisor { axis: 0, band: 30, grid: 160 })
        ));
        // 160 / 32 = 5 is odd.
        assert!(matches!(
            make_window(&g, &[32, 48]),
            Err(Error::OddFactor { axis: 0, factor: 5, .. })
        ));
        assert!(matches!(
            make_window(&g, &[40, 3]),
            Err(Error::OddExtent { axis: 1, .. })
        ));
        // factor 1 is odd
        assert!(make_window(&g, &[160, 48]).is_err());
    }

    #[test]
    fn window_is_centered() {
        let g = make_grid(&[8, 12]).unwrap();
        let w = make_window(&g, &[4, 6]).unwrap();
        assert_eq!(w.offsets(), vec![2, 3]);
        assert!(w.contains_centered(&[4, 6]));
        assert!(w.contains_centered(&[2, 3]));
        assert!(!w.contains_centered(&[6, 6]));
        assert!(!w.contains_centered(&[1, 6]));
    }

    #[test]
    fn ravel_roundtrip() {
        let g = make_grid(&[4, 6, 8]).unwrap();
        assert_eq!(g.strides(), vec![48, 8, 1]);
        for f in 0..g.len() {
            assert_eq!(g.ravel(&g.unravel(f)), f);
        }
        assert_eq!(g.ravel(&[1, 2, 3]), 48 + 16 + 3);
    }

    #[test]
    fn containers_reject_bad_shapes() {
        let g = make_grid(&[4, 4]).unwrap();
        assert!(ScalarImage::new(g.clone(), vec![0.0; 15]).is_err());
        assert!(ScalarImage::new(g.clone(), vec![f64::NAN; 16]).is_err());
        assert!(DenseField::new(g.clone(), vec![vec![0.0; 16]]).is_err());
        assert!(DenseField::new(g.clone(), vec![vec![0.0; 16], vec![f64::INFINITY; 16]]).is_err());
        let w = make_window(&g, &[2, 2]).unwrap();
        assert!(LowResField::new(w.clone(), vec![vec![0.0; 4]; 3]).is_err());
        assert!(LowResField::from_flat(w, &[0.0; 8]).is_ok());
        assert!(LabelMap::new(g, vec![0; 3]).is_err());
    }

    fn mask_zero_fraction(dims: &[usize], band: &[usize]) -> (usize, usize) {
        let g = make_grid(dims).unwrap();
        let w = make_window(&g, band).unwrap();
        let zeros = w.mask().iter().filter(|&&m| m == 0).count();
        (zeros, g.len())
    }

    #[test]
    fn mask_zero_fraction_matches_factor_product() {
        let (z, n) = mask_zero_fraction(&[16, 16], &[4, 4]);
        assert_eq!(z * 16, n * 15);
        let (z, n) = mask_zero_fraction(&[8, 12, 16], &[4, 6, 4]);
        assert_eq!(z * 16, n * 15);
    }

    proptest! {
        #[test]
        fn constructors_never_yield_invalid_objects(
            dims in prop::collection::vec(0usize..40, 1..5),
            band in prop::collection::vec(0usize..20, 1..5),
        ) {
            if let Ok(g) = GridSpec::new(&dims) {
                prop_assert!(g.ndim() == 2 || g.ndim() == 3);
                prop_assert!(g.dims().iter().all(|&m| m % 2 == 0 && m >= 4));
                if let Ok(w) = CropWindow::new(&g, &band) {
                    for ((&m, &mc), &f) in g.dims().iter().zip(w.band_dims()).zip(w.factors()) {
                        prop_assert!(mc % 2 == 0 && mc >= 2);
                        prop_assert_eq!(m % mc, 0);
                        prop_assert_eq!(f * mc, m);
                        prop_assert_eq!(f % 2, 0);
                    }
                    let zeros = w.mask().iter().filter(|&&x| x == 0).count();
                    let prod: usize = w.factors().iter().product();
                    prop_assert_eq!(zeros * prod, g.len() * (prod - 1));
                }
            }
        }
    }
}
