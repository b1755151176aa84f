//! Deterministic synthetic image pairs with known band-limited deformations.
//!
//! Random numbers come from xoshiro256++ seeded through SplitMix64
//! (`seed_from_u64`). Uniform variates take the top 53 bits of each 64-bit
//! output, `u = (x >> 11) · 2⁻⁵³ ∈ [0, 1)`, and standard normal variates use
//! the cosine branch of Box–Muller, `z = √(−2 ln(1 − u₁)) · cos(2π u₂)`, one
//! normal per pair of uniforms. Every draw happens in a fixed order so a
//! given configuration reproduces bit-identical outputs.

use num_complex::Complex64;
use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::deform;
use crate::error::{Error, Result};
use crate::grid::{unravel, CropWindow, DenseField, GridSpec, LabelMap, LowResField, ScalarImage};
use crate::metrics;
use crate::spectral::{self, fft_nd};

/// Portable seeded generator for synthetic data.
#[derive(Debug, Clone)]
pub struct SynthRng(Xoshiro256PlusPlus);

impl SynthRng {
    pub fn new(seed: u64) -> Self {
        Self(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub dims: Vec<usize>,
    pub band_dims: Vec<usize>,
    /// Largest displacement component of the ground truth, voxels.
    pub amplitude: f64,
    pub blob_count: usize,
    pub seed: u64,
    /// Standard deviation, in band frequency bins, of the Gaussian envelope
    /// applied to the random band coefficients. Smaller values give smoother
    /// ground truths; `0` keeps the white spectrum.
    pub spectral_sigma: f64,
    /// Amplitude of out-of-band noise added to the ground truth; `0` keeps it
    /// strictly band-limited.
    pub high_freq_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dims: vec![64, 96],
            band_dims: vec![16, 24],
            amplitude: 3.0,
            blob_count: 24,
            seed: 0,
            spectral_sigma: 1.5,
            high_freq_noise: 0.0,
        }
    }
}

/// A synthetic registration problem: `fixed = warp(moving, phi_gt)`.
#[derive(Debug, Clone)]
pub struct SynthPair {
    pub moving: ScalarImage,
    pub fixed: ScalarImage,
    pub phi_gt: DenseField,
    pub s_gt: LowResField,
    pub labels_moving: LabelMap,
    pub labels_fixed: LabelMap,
}

struct Blob {
    center: Vec<f64>,
    sigma: f64,
    weight: f64,
}

/// Label assigned where the strongest blob falls below this fraction of its
/// peak.
const LABEL_THRESHOLD: f64 = 0.25;

fn blob_image(grid: &GridSpec, count: usize, rng: &mut SynthRng) -> (ScalarImage, LabelMap) {
    let dims = grid.dims();
    let short = *dims.iter().min().expect("grid has axes") as f64;
    let blobs: Vec<Blob> = (0..count)
        .map(|_| Blob {
            center: dims.iter().map(|&m| rng.uniform_in(0.0, m as f64)).collect(),
            sigma: rng.uniform_in(0.06, 0.12) * short,
            weight: rng.uniform_in(0.3, 1.0),
        })
        .collect();
    let mut values = Vec::with_capacity(grid.len());
    let mut labels = Vec::with_capacity(grid.len());
    for f in 0..grid.len() {
        let x = grid.unravel(f);
        let mut total = 0.0;
        let mut best = (0u32, 0.0_f64);
        for (k, b) in blobs.iter().enumerate() {
            let r2: f64 = x
                .iter()
                .zip(&b.center)
                .map(|(&xi, c)| (xi as f64 - c).powi(2))
                .sum();
            let g = (-r2 / (2.0 * b.sigma * b.sigma)).exp();
            total += b.weight * g;
            if g > best.1 {
                best = (k as u32 + 1, g);
            }
        }
        values.push(total);
        labels.push(if best.1 >= LABEL_THRESHOLD { best.0 } else { 0 });
    }
    let peak = values.iter().cloned().fold(0.0_f64, f64::max);
    if peak > 0.0 {
        values.iter_mut().for_each(|v| *v /= peak);
    }
    (
        ScalarImage::new(grid.clone(), values).expect("finite blob sums"),
        LabelMap::new(grid.clone(), labels).expect("one label per voxel"),
    )
}

/// Signed frequency of index `k` on an axis of extent `m` (corner layout).
fn signed_freq(k: usize, m: usize) -> f64 {
    if k < m / 2 {
        k as f64
    } else {
        k as f64 - m as f64
    }
}

fn random_band_lane(window: &CropWindow, sigma: f64, rng: &mut SynthRng) -> Vec<f64> {
    let bd = window.band_dims();
    let mut lane: Vec<Complex64> = (0..window.band_len())
        .map(|_| Complex64::new(rng.normal(), 0.0))
        .collect();
    if sigma > 0.0 {
        fft_nd(bd, &mut lane, false);
        for (f, c) in lane.iter_mut().enumerate() {
            let k2: f64 = unravel(bd, f)
                .iter()
                .zip(bd)
                .map(|(&k, &m)| signed_freq(k, m).powi(2))
                .sum();
            *c *= (-k2 / (2.0 * sigma * sigma)).exp();
        }
        fft_nd(bd, &mut lane, true);
        let n = window.band_len() as f64;
        lane.iter_mut().for_each(|c| *c /= n);
    }
    lane.iter().map(|c| c.re).collect()
}

/// Generates a synthetic pair. Fails when the ground-truth deformation folds.
pub fn make_pair(config: &SynthConfig) -> Result<SynthPair> {
    if !(config.amplitude >= 0.0 && config.amplitude.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "amplitude must be non-negative, got {}",
            config.amplitude
        )));
    }
    if !(config.spectral_sigma >= 0.0 && config.high_freq_noise >= 0.0) {
        return Err(Error::InvalidParameter(
            "spectral_sigma and high_freq_noise must be non-negative".into(),
        ));
    }
    let grid = GridSpec::new(&config.dims)?;
    let window = CropWindow::new(&grid, &config.band_dims)?;
    let mut rng = SynthRng::new(config.seed);

    let (moving, labels_moving) = blob_image(&grid, config.blob_count, &mut rng);

    let raw: Vec<Vec<f64>> = (0..grid.ndim())
        .map(|_| random_band_lane(&window, config.spectral_sigma, &mut rng))
        .collect();
    let raw = LowResField::new(window.clone(), raw)?;
    let peak = spectral::decode(&raw)?.max_abs();
    let scale = if peak > 0.0 { config.amplitude / peak } else { 0.0 };
    let s_gt = LowResField::new(
        window.clone(),
        raw.channels()
            .iter()
            .map(|c| c.iter().map(|v| v * scale).collect())
            .collect(),
    )?;
    let mut phi_gt = spectral::decode(&s_gt)?;

    if config.high_freq_noise > 0.0 {
        let noise = DenseField::new(
            grid.clone(),
            (0..grid.ndim())
                .map(|_| (0..grid.len()).map(|_| rng.normal()).collect())
                .collect(),
        )?;
        let low = spectral::decode(&spectral::encode(&noise, &window)?.low_res)?;
        let channels = phi_gt
            .channels()
            .iter()
            .zip(noise.channels().iter().zip(low.channels()))
            .map(|(p, (n, l))| {
                p.iter()
                    .zip(n.iter().zip(l))
                    .map(|(pv, (nv, lv))| pv + config.high_freq_noise * (nv - lv))
                    .collect()
            })
            .collect();
        phi_gt = DenseField::new(grid.clone(), channels)?;
    }

    let folding_percent = deform::jacobian(&phi_gt).folding_percent;
    if folding_percent > 0.0 {
        return Err(Error::FoldingAmplitude { folding_percent });
    }
    let fixed = deform::warp(&moving, &phi_gt)?;
    let labels_fixed = metrics::warp_labels(&labels_moving, &phi_gt)?;
    Ok(SynthPair {
        moving,
        fixed,
        phi_gt,
        s_gt,
        labels_moving,
        labels_fixed,
    })
}
