//! Similarity terms, the smoothness regularizer, and the registration loss
//! with its gradient with respect to the low-resolution parameters.

use serde::{Deserialize, Serialize};

use crate::deform::{self, ScalingSquaring, DEFAULT_SQUARING_STEPS};
use crate::error::{Error, Result};
use crate::grid::{DenseField, LowResField, ScalarImage};
use crate::spectral;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Mse,
    Ncc,
}

impl std::str::FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(Similarity::Mse),
            "ncc" => Ok(Similarity::Ncc),
            other => Err(Error::InvalidParameter(format!(
                "unknown similarity {other:?} (expected mse or ncc)"
            ))),
        }
    }
}

/// Loss hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub similarity: Similarity,
    /// Weight of the smoothness term.
    pub lambda: f64,
    /// NCC window extent per axis, odd.
    pub ncc_window: usize,
    /// NCC variance stabilizer.
    pub epsilon: f64,
}

impl LossConfig {
    pub fn mse() -> Self {
        Self {
            similarity: Similarity::Mse,
            lambda: 0.01,
            ncc_window: 9,
            epsilon: 1e-5,
        }
    }

    pub fn ncc() -> Self {
        Self {
            similarity: Similarity::Ncc,
            lambda: 5.0,
            ..Self::mse()
        }
    }

    /// Defaults for a similarity choice: λ = 0.01 for MSE, λ = 5 for NCC.
    pub fn for_similarity(similarity: Similarity) -> Self {
        match similarity {
            Similarity::Mse => Self::mse(),
            Similarity::Ncc => Self::ncc(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.ncc_window < 3 || self.ncc_window % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "ncc_window must be odd and >= 3, got {}",
                self.ncc_window
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::mse()
    }
}

/// A scalar value with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrad<G> {
    pub value: f64,
    pub grad: G,
}

fn check_pair(a: &ScalarImage, b: &ScalarImage) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(Error::ShapeMismatch(format!(
            "image grids {:?} and {:?}",
            a.grid().dims(),
            b.grid().dims()
        )));
    }
    Ok(())
}

/// Mean squared difference and its gradient with respect to `a`.
pub fn mse(a: &ScalarImage, b: &ScalarImage) -> Result<ValueGrad<Vec<f64>>> {
    check_pair(a, b)?;
    let n = a.values().len() as f64;
    let mut value = 0.0;
    let grad = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| {
            let d = x - y;
            value += d * d;
            2.0 * d / n
        })
        .collect();
    Ok(ValueGrad {
        value: value / n,
        grad,
    })
}

/// Sum over the clipped box `[x - r, x + r]` along every axis.
pub(crate) fn box_sum(dims: &[usize], data: &[f64], radius: usize) -> Vec<f64> {
    let strides = crate::grid::strides(dims);
    let mut cur = data.to_vec();
    let total = data.len();
    let mut prefix = Vec::new();
    for (axis, &m) in dims.iter().enumerate() {
        let stride = strides[axis];
        let block = stride * m;
        let mut next = vec![0.0; total];
        for outer in (0..total).step_by(block) {
            for inner in 0..stride {
                let base = outer + inner;
                prefix.clear();
                prefix.push(0.0);
                let mut acc = 0.0;
                for t in 0..m {
                    acc += cur[base + t * stride];
                    prefix.push(acc);
                }
                for t in 0..m {
                    let lo = t.saturating_sub(radius);
                    let hi = (t + radius).min(m - 1) + 1;
                    next[base + t * stride] = prefix[hi] - prefix[lo];
                }
            }
        }
        cur = next;
    }
    cur
}

/// Windowed squared local correlation, averaged over voxels, with its
/// gradient with respect to `a`. Windows are clipped at the volume border.
///
/// Per voxel, over the window: `cc = cross² / ((var_a + ε)(var_b + ε))`,
/// with `cross`, `var_a`, `var_b` the centered second-moment sums.
pub fn ncc_local(
    a: &ScalarImage,
    b: &ScalarImage,
    config: &LossConfig,
) -> Result<ValueGrad<Vec<f64>>> {
    check_pair(a, b)?;
    config.validate()?;
    let dims = a.grid().dims();
    let r = config.ncc_window / 2;
    let eps = config.epsilon;
    let av = a.values();
    let bv = b.values();
    let n = av.len();
    let ones = vec![1.0; n];
    let prod = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..n).map(f).collect() };
    let count = box_sum(dims, &ones, r);
    let sa = box_sum(dims, av, r);
    let sb = box_sum(dims, bv, r);
    let saa = box_sum(dims, &prod(&|i| av[i] * av[i]), r);
    let sbb = box_sum(dims, &prod(&|i| bv[i] * bv[i]), r);
    let sab = box_sum(dims, &prod(&|i| av[i] * bv[i]), r);

    let mut total = 0.0;
    let mut alpha = vec![0.0; n];
    let mut alpha_mb = vec![0.0; n];
    let mut beta = vec![0.0; n];
    let mut beta_ma = vec![0.0; n];
    for x in 0..n {
        let c = count[x];
        let (ma, mb) = (sa[x] / c, sb[x] / c);
        let cross = sab[x] - sa[x] * mb;
        let va = saa[x] - sa[x] * ma + eps;
        let vb = sbb[x] - sb[x] * mb + eps;
        let cc = cross * cross / (va * vb);
        total += cc;
        alpha[x] = 2.0 * cross / (va * vb);
        beta[x] = 2.0 * cc / va;
        alpha_mb[x] = alpha[x] * mb;
        beta_ma[x] = beta[x] * ma;
    }
    let alpha = box_sum(dims, &alpha, r);
    let alpha_mb = box_sum(dims, &alpha_mb, r);
    let beta = box_sum(dims, &beta, r);
    let beta_ma = box_sum(dims, &beta_ma, r);
    let inv = 1.0 / n as f64;
    let grad = (0..n)
        .map(|y| inv * (bv[y] * alpha[y] - alpha_mb[y] - av[y] * beta[y] + beta_ma[y]))
        .collect();
    Ok(ValueGrad {
        value: total * inv,
        grad,
    })
}

/// Mean over voxels, channels and axes of squared forward differences (zero
/// at the far border), with its gradient.
pub fn smoothness(field: &DenseField) -> ValueGrad<DenseField> {
    let grid = field.grid();
    let dims = grid.dims();
    let strides = grid.strides();
    let nd = grid.ndim();
    let norm = (grid.len() * nd * nd) as f64;
    let mut value = 0.0;
    let mut grads = vec![vec![0.0; grid.len()]; nd];
    for (c, lane) in field.channels().iter().enumerate() {
        let g = &mut grads[c];
        for f in 0..grid.len() {
            let idx = grid.unravel(f);
            for d in 0..nd {
                if idx[d] + 1 < dims[d] {
                    let nb = f + strides[d];
                    let diff = lane[nb] - lane[f];
                    value += diff * diff;
                    g[nb] += 2.0 * diff / norm;
                    g[f] -= 2.0 * diff / norm;
                }
            }
        }
    }
    ValueGrad {
        value: value / norm,
        grad: DenseField::new(grid.clone(), grads).expect("gradient matches field shape"),
    }
}

/// Similarity loss (to be minimized) and its gradient with respect to the
/// warped image.
fn similarity_loss(
    warped: &ScalarImage,
    fixed: &ScalarImage,
    config: &LossConfig,
) -> Result<ValueGrad<Vec<f64>>> {
    match config.similarity {
        Similarity::Mse => mse(warped, fixed),
        Similarity::Ncc => {
            let mut vg = ncc_local(warped, fixed, config)?;
            vg.value = -vg.value;
            vg.grad.iter_mut().for_each(|g| *g = -*g);
            Ok(vg)
        }
    }
}

/// Value, components and parameter gradient of the registration loss.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    /// Similarity term as minimized: the MSE, or minus the mean local NCC.
    pub similarity: f64,
    /// Unweighted smoothness of the regularized field.
    pub smoothness: f64,
    pub grad: LowResField,
    /// Final displacement `φ` (`Exp(v)` in diffeomorphic mode).
    pub phi: DenseField,
}

/// Registration loss for low-resolution parameters `s`.
///
/// Plain mode: `φ = decode(s)`, loss `Sim(moving∘(Id+φ), fixed) + λ·smooth(φ)`.
/// Diffeomorphic mode: `v = decode(s)`, `φ = Exp(v)`, and the regularizer
/// acts on `v`.
pub fn total_loss(
    s: &LowResField,
    moving: &ScalarImage,
    fixed: &ScalarImage,
    config: &LossConfig,
    diffeo: bool,
) -> Result<LossEval> {
    total_loss_with_steps(s, moving, fixed, config, diffeo, DEFAULT_SQUARING_STEPS)
}

pub fn total_loss_with_steps(
    s: &LowResField,
    moving: &ScalarImage,
    fixed: &ScalarImage,
    config: &LossConfig,
    diffeo: bool,
    steps: usize,
) -> Result<LossEval> {
    check_pair(moving, fixed)?;
    config.validate()?;
    let window = s.window();
    if window.parent() != moving.grid() {
        return Err(Error::ShapeMismatch(format!(
            "window parent {:?} differs from image grid {:?}",
            window.parent().dims(),
            moving.grid().dims()
        )));
    }
    let decoded = spectral::decode(s)?;
    let flow = if diffeo {
        Some(ScalingSquaring::forward(&decoded, steps)?)
    } else {
        None
    };
    let phi = flow.as_ref().map_or(&decoded, ScalingSquaring::field);
    let warped = deform::warp(moving, phi)?;
    let sim = similarity_loss(&warped, fixed, config)?;
    let smooth = smoothness(&decoded);

    let g_phi = deform::warp_gradient(moving, phi, &sim.grad)?;
    let g_decoded = match &flow {
        Some(f) => f.adjoint(&g_phi)?,
        None => g_phi,
    };
    let g_total = add_scaled(&g_decoded, &smooth.grad, config.lambda);
    let grad = spectral::decode_adjoint(&g_total, window)?;
    let phi = match flow {
        Some(f) => f.into_field(),
        None => decoded,
    };
    Ok(LossEval {
        loss: sim.value + config.lambda * smooth.value,
        similarity: sim.value,
        smoothness: smooth.value,
        grad,
        phi,
    })
}

fn add_scaled(a: &DenseField, b: &DenseField, alpha: f64) -> DenseField {
    let channels = a
        .channels()
        .iter()
        .zip(b.channels())
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + alpha * q).collect())
        .collect();
    DenseField::new(a.grid().clone(), channels).expect("same shapes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, make_window, GridSpec};
    use rand_core::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn uniform(rng: &mut Xoshiro256PlusPlus) -> f64 {
        (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn random_image(grid: &GridSpec, rng: &mut Xoshiro256PlusPlus) -> ScalarImage {
        ScalarImage::new(grid.clone(), (0..grid.len()).map(|_| uniform(rng)).collect()).unwrap()
    }

    /// Brute-force box sum over the clipped window.
    fn brute_box(dims: &[usize], data: &[f64], r: usize) -> Vec<f64> {
        let n = data.len();
        (0..n)
            .map(|x| {
                let xi = crate::grid::unravel(dims, x);
                (0..n)
                    .filter(|&y| {
                        let yi = crate::grid::unravel(dims, y);
                        xi.iter().zip(&yi).all(|(a, b)| a.abs_diff(*b) <= r)
                    })
                    .map(|y| data[y])
                    .sum()
            })
            .collect()
    }

    #[test]
    fn box_sum_matches_brute_force() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(0);
        for dims in [vec![6, 8], vec![4, 6, 8]] {
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n).map(|_| uniform(&mut rng)).collect();
            for r in [1, 2, 4] {
                let fast = box_sum(&dims, &data, r);
                let slow = brute_box(&dims, &data, r);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn mse_examples() {
        let g = make_grid(&[4, 4]).unwrap();
        let a = ScalarImage::new(g.clone(), vec![1.0; 16]).unwrap();
        let b = ScalarImage::zeros(g.clone());
        let same = mse(&a, &a).unwrap();
        assert_eq!(same.value, 0.0);
        assert!(same.grad.iter().all(|&v| v == 0.0));
        assert_eq!(mse(&a, &b).unwrap().value, 1.0);

        // Two differing voxels: a = [0, 2], b = [1, 1] over 2 voxels gives 1
        // with gradient [-1, 1]; embedded in 16 voxels the sums are the same
        // and the mean rescales by 2/16.
        let mut av = vec![0.0; 16];
        let mut bv = vec![0.0; 16];
        av[1] = 2.0;
        bv[0] = 1.0;
        bv[1] = 1.0;
        let r = mse(
            &ScalarImage::new(g.clone(), av).unwrap(),
            &ScalarImage::new(g.clone(), bv).unwrap(),
        )
        .unwrap();
        assert!((r.value * 16.0 / 2.0 - 1.0).abs() < 1e-15);
        assert!((r.grad[0] * 16.0 / 2.0 + 1.0).abs() < 1e-15);
        assert!((r.grad[1] * 16.0 / 2.0 - 1.0).abs() < 1e-15);

        assert!(mse(&a, &ScalarImage::zeros(make_grid(&[4, 6]).unwrap())).is_err());
    }

    #[test]
    fn ncc_examples() {
        let g = make_grid(&[12, 14]).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        let a = random_image(&g, &mut rng);
        let cfg = LossConfig::ncc();
        let same = ncc_local(&a, &a, &cfg).unwrap().value;
        assert!(same > 1.0 - 1e-3 && same <= 1.0);
        let affine = ScalarImage::new(g.clone(), a.values().iter().map(|v| -3.0 * v + 7.0).collect()).unwrap();
        let v = ncc_local(&a, &affine, &cfg).unwrap().value;
        assert!(v > 1.0 - 1e-3 && v <= 1.0);
        let flat = ScalarImage::new(g.clone(), vec![0.4; g.len()]).unwrap();
        assert!(ncc_local(&flat, &a, &cfg).unwrap().value < 1e-6);
        let b = random_image(&g, &mut rng);
        let v = ncc_local(&a, &b, &cfg).unwrap().value;
        assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn ncc_gradient_finite_difference() {
        let g = make_grid(&[10, 12]).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(9);
        let a = random_image(&g, &mut rng);
        let b = random_image(&g, &mut rng);
        let cfg = LossConfig { ncc_window: 5, ..LossConfig::ncc() };
        let an = ncc_local(&a, &b, &cfg).unwrap().grad;
        let h = 1e-6;
        for i in 0..g.len() {
            let mut v = a.values().to_vec();
            v[i] += h;
            let up = ncc_local(&ScalarImage::new(g.clone(), v.clone()).unwrap(), &b, &cfg).unwrap().value;
            v[i] -= 2.0 * h;
            let dn = ncc_local(&ScalarImage::new(g.clone(), v).unwrap(), &b, &cfg).unwrap().value;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - an[i]).abs() <= 1e-5 * fd.abs().max(an[i].abs()).max(1e-4), "{i}: {fd} {}", an[i]);
        }
    }

    #[test]
    fn smoothness_examples() {
        let g = make_grid(&[6, 8]).unwrap();
        let c = DenseField::constant(g.clone(), &[1.0, 2.0]).unwrap();
        let s = smoothness(&c);
        assert_eq!(s.value, 0.0);
        assert!(s.grad.channels().iter().flatten().all(|&v| v == 0.0));
        // f(i) = i in channel 0: squared difference 1 at 5 of 6 positions
        // along axis 0, averaged over 2 channels and 2 axes.
        let ramp = DenseField::from_fn(g.clone(), |c, x| if c == 0 { x[0] as f64 } else { 0.0 }).unwrap();
        let want = (6.0 - 1.0) / 6.0 / 4.0;
        assert!((smoothness(&ramp).value - want).abs() < 1e-15);
    }

    #[test]
    fn smoothness_gradient_finite_difference() {
        let g = make_grid(&[12, 12]).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
        let f = DenseField::new(g.clone(), (0..2).map(|_| (0..144).map(|_| uniform(&mut rng)).collect()).collect()).unwrap();
        let an = smoothness(&f).grad;
        let h = 1e-5;
        for c in 0..2 {
            for i in 0..144 {
                let mut ch = f.channels().to_vec();
                ch[c][i] += h;
                let up = smoothness(&DenseField::new(g.clone(), ch.clone()).unwrap()).value;
                ch[c][i] -= 2.0 * h;
                let dn = smoothness(&DenseField::new(g.clone(), ch).unwrap()).value;
                let fd = (up - dn) / (2.0 * h);
                let a = an.channel(c)[i];
                assert!((fd - a).abs() <= 1e-6 * fd.abs().max(a.abs()).max(1e-8));
            }
        }
    }

    #[test]
    fn identity_is_global_optimum_for_mse() {
        let g = make_grid(&[16, 24]).unwrap();
        let w = make_window(&g, &[4, 6]).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
        let img = random_image(&g, &mut rng);
        for diffeo in [false, true] {
            let e = total_loss(&LowResField::zeros(w.clone()), &img, &img, &LossConfig::mse(), diffeo).unwrap();
            assert_eq!(e.loss, 0.0);
            let norm: f64 = e.grad.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm < 1e-8);
        }
    }

    #[test]
    fn zero_lambda_isolates_similarity() {
        let g = make_grid(&[16, 24]).unwrap();
        let w = make_window(&g, &[4, 6]).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        let m = random_image(&g, &mut rng);
        let f = random_image(&g, &mut rng);
        let s = LowResField::new(w.clone(), (0..2).map(|_| (0..24).map(|_| uniform(&mut rng) - 0.5).collect()).collect()).unwrap();
        let cfg = LossConfig { lambda: 0.0, ..LossConfig::mse() };
        let e = total_loss(&s, &m, &f, &cfg, false).unwrap();
        let direct = mse(&deform::warp(&m, &spectral::decode(&s).unwrap()).unwrap(), &f).unwrap().value;
        assert!((e.loss - direct).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(LossConfig { lambda: -1.0, ..LossConfig::mse() }.validate().is_err());
        assert!(LossConfig { ncc_window: 4, ..LossConfig::mse() }.validate().is_err());
        assert!(LossConfig { epsilon: 0.0, ..LossConfig::mse() }.validate().is_err());
        assert_eq!("NCC".parse::<Similarity>().unwrap(), Similarity::Ncc);
        assert!("mi".parse::<Similarity>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn mse_is_symmetric_and_nonnegative(seed in 0u64..500) {
            let g = make_grid(&[6, 4]).unwrap();
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            let a = random_image(&g, &mut rng);
            let b = random_image(&g, &mut rng);
            let ab = mse(&a, &b).unwrap().value;
            proptest::prop_assert!(ab > 0.0);
            proptest::prop_assert_eq!(ab, mse(&b, &a).unwrap().value);
        }

        #[test]
        fn smoothness_is_quadratic(seed in 0u64..500, alpha in -4.0f64..4.0) {
            let g = make_grid(&[6, 8]).unwrap();
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            let f = DenseField::new(g.clone(), (0..2).map(|_| (0..48).map(|_| uniform(&mut rng)).collect()).collect()).unwrap();
            let base = smoothness(&f).value;
            proptest::prop_assert!(base > 0.0);
            let scaled = smoothness(&f.scaled(alpha)).value;
            proptest::prop_assert!((scaled - alpha * alpha * base).abs() <= 1e-10 * base.max(scaled));
        }

        #[test]
        fn ncc_is_bounded(seed in 0u64..200) {
            let g = make_grid(&[8, 8]).unwrap();
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            let a = random_image(&g, &mut rng);
            let b = random_image(&g, &mut rng);
            let v = ncc_local(&a, &b, &LossConfig::ncc()).unwrap().value;
            proptest::prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
