//! Linear-interpolation warping, scaling-and-squaring exponentiation, and
//! Jacobian analysis of displacement fields.
//!
//! Warping is backward: `warp(I, φ)(x) = I(x + φ(x))`. Sample coordinates
//! outside `[0, m - 1]` are clamped to the border, and the coordinate
//! derivative along a clamped axis is zero.

use crate::error::{Error, Result};
use crate::grid::{DenseField, GridSpec, ScalarImage};

/// Default number of squaring steps for [`exp_velocity`].
pub const DEFAULT_SQUARING_STEPS: usize = 7;

/// Coordinate lanes of the identity map: lane `d` at index `x` equals `x_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityGrid {
    grid: GridSpec,
    lanes: Vec<Vec<f64>>,
}

impl IdentityGrid {
    pub fn new(grid: &GridSpec) -> Self {
        let lanes = (0..grid.ndim())
            .map(|d| {
                (0..grid.len())
                    .map(|f| grid.unravel(f)[d] as f64)
                    .collect()
            })
            .collect();
        Self {
            grid: grid.clone(),
            lanes,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn lanes(&self) -> &[Vec<f64>] {
        &self.lanes
    }
}

#[derive(Debug, Clone, Copy)]
struct AxisSample {
    i0: usize,
    i1: usize,
    w1: f64,
    clamped: bool,
}

impl AxisSample {
    fn new(p: f64, m: usize) -> Self {
        let last = (m - 1) as f64;
        if p < 0.0 {
            AxisSample { i0: 0, i1: 1, w1: 0.0, clamped: true }
        } else if p > last {
            AxisSample { i0: m - 2, i1: m - 1, w1: 1.0, clamped: true }
        } else {
            let i0 = (p.floor() as usize).min(m - 2);
            AxisSample { i0, i1: i0 + 1, w1: p - i0 as f64, clamped: false }
        }
    }
}

/// Interpolation stencil at one sample point: corner offsets, weights and
/// the weights of the coordinate derivatives.
#[derive(Debug, Clone, Copy)]
struct Stencil {
    n: usize,
    idx: [usize; 8],
    w: [f64; 8],
    dw: [[f64; 8]; 3],
}

impl Stencil {
    fn at(dims: &[usize], strides: &[usize], pos: &[f64]) -> Self {
        let nd = dims.len();
        let mut axes = [AxisSample { i0: 0, i1: 0, w1: 0.0, clamped: true }; 3];
        for d in 0..nd {
            axes[d] = AxisSample::new(pos[d], dims[d]);
        }
        let n = 1 << nd;
        let mut st = Stencil {
            n,
            idx: [0; 8],
            w: [0.0; 8],
            dw: [[0.0; 8]; 3],
        };
        for corner in 0..n {
            let mut off = 0;
            let mut w = 1.0;
            let mut dw = [1.0; 3];
            for (d, a) in axes.iter().enumerate().take(nd) {
                let hi = corner >> (nd - 1 - d) & 1 == 1;
                off += if hi { a.i1 } else { a.i0 } * strides[d];
                let wd = if hi { a.w1 } else { 1.0 - a.w1 };
                let dd = match (a.clamped, hi) {
                    (true, _) => 0.0,
                    (false, true) => 1.0,
                    (false, false) => -1.0,
                };
                w *= wd;
                for (e, dwe) in dw.iter_mut().enumerate().take(nd) {
                    *dwe *= if e == d { dd } else { wd };
                }
            }
            st.idx[corner] = off;
            st.w[corner] = w;
            for e in 0..nd {
                st.dw[e][corner] = dw[e];
            }
        }
        st
    }

    fn value(&self, lane: &[f64]) -> f64 {
        let mut acc = self.w[0] * lane[self.idx[0]];
        for k in 1..self.n {
            acc += self.w[k] * lane[self.idx[k]];
        }
        acc
    }

    fn derivative(&self, axis: usize, lane: &[f64]) -> f64 {
        (0..self.n).map(|k| self.dw[axis][k] * lane[self.idx[k]]).sum()
    }
}

/// Interpolation stencils of every voxel's sample point `x + φ(x)`.
fn stencils(phi: &DenseField) -> Vec<Stencil> {
    let grid = phi.grid();
    let dims = grid.dims();
    let strides = grid.strides();
    let nd = grid.ndim();
    let mut pos = [0.0; 3];
    (0..grid.len())
        .map(|f| {
            let idx = grid.unravel(f);
            for d in 0..nd {
                pos[d] = idx[d] as f64 + phi.channel(d)[f];
            }
            Stencil::at(dims, &strides, &pos[..nd])
        })
        .collect()
}

fn check_same_grid(a: &GridSpec, b: &GridSpec) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!(
            "grid {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

fn check_finite_field(phi: &DenseField) -> Result<()> {
    if phi.channels().iter().flatten().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("displacement"))
    }
}

/// Samples a lane at `x + φ(x)` for every voxel.
fn warp_lane(lane: &[f64], st: &[Stencil]) -> Vec<f64> {
    st.iter().map(|s| s.value(lane)).collect()
}

/// Bilinear/trilinear backward warp of an image.
pub fn warp(image: &ScalarImage, phi: &DenseField) -> Result<ScalarImage> {
    check_same_grid(image.grid(), phi.grid())?;
    check_finite_field(phi)?;
    let st = stencils(phi);
    ScalarImage::new(image.grid().clone(), warp_lane(image.values(), &st))
}

/// Channel-wise backward warp of a vector field.
pub fn warp_field(f: &DenseField, phi: &DenseField) -> Result<DenseField> {
    check_same_grid(f.grid(), phi.grid())?;
    check_finite_field(phi)?;
    let st = stencils(phi);
    let channels = f.channels().iter().map(|c| warp_lane(c, &st)).collect();
    DenseField::new(f.grid().clone(), channels)
}

/// Displacement of the composed map `x ↦ T_outer(T_inner(x))`, where
/// `T(x) = x + φ(x)`.
pub fn compose(outer: &DenseField, inner: &DenseField) -> Result<DenseField> {
    let warped = warp_field(outer, inner)?;
    let channels = warped
        .channels()
        .iter()
        .zip(inner.channels())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect();
    DenseField::new(inner.grid().clone(), channels)
}

/// Gradient of `Σ_x g_out(x)·I(x + φ(x))` with respect to `φ`.
pub fn warp_gradient(image: &ScalarImage, phi: &DenseField, g_out: &[f64]) -> Result<DenseField> {
    check_same_grid(image.grid(), phi.grid())?;
    if g_out.len() != image.grid().len() {
        return Err(Error::ShapeMismatch("output gradient length".into()));
    }
    let st = stencils(phi);
    let nd = phi.grid().ndim();
    let channels = (0..nd)
        .map(|d| {
            st.iter()
                .zip(g_out)
                .map(|(s, g)| g * s.derivative(d, image.values()))
                .collect()
        })
        .collect();
    DenseField::new(phi.grid().clone(), channels)
}

/// Gradient of `Σ_x g_out(x)·I(x + φ(x))` with respect to the image values
/// `I`: the transpose of the interpolation, scattering `g_out` onto the
/// stencil corners.
pub fn warp_image_adjoint(phi: &DenseField, g_out: &[f64]) -> Result<Vec<f64>> {
    if g_out.len() != phi.grid().len() {
        return Err(Error::ShapeMismatch("output gradient length".into()));
    }
    let st = stencils(phi);
    Ok(scatter(&st, g_out, phi.grid().len()))
}

fn scatter(st: &[Stencil], g: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (s, &gv) in st.iter().zip(g) {
        for k in 0..s.n {
            out[s.idx[k]] += s.w[k] * gv;
        }
    }
    out
}

/// Forward scaling-and-squaring pass with the intermediates needed for the
/// reverse pass.
#[derive(Debug, Clone)]
pub struct ScalingSquaring {
    steps: usize,
    /// `ψ_0 = v / 2^steps`, ..., `ψ_steps = Exp(v)`.
    trace: Vec<DenseField>,
}

impl ScalingSquaring {
    pub fn forward(v: &DenseField, steps: usize) -> Result<Self> {
        check_finite_field(v)?;
        let mut psi = v.scaled(0.5_f64.powi(steps as i32));
        let mut trace = Vec::with_capacity(steps + 1);
        for _ in 0..steps {
            let next = compose(&psi, &psi)?;
            trace.push(psi);
            psi = next;
        }
        trace.push(psi);
        Ok(Self { steps, trace })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `Exp(v)`.
    pub fn field(&self) -> &DenseField {
        self.trace.last().expect("trace holds at least psi_0")
    }

    pub fn into_field(mut self) -> DenseField {
        self.trace.pop().expect("trace holds at least psi_0")
    }

    /// Gradient with respect to `v` of a scalar whose gradient with respect
    /// to `Exp(v)` is `g`.
    pub fn adjoint(&self, g: &DenseField) -> Result<DenseField> {
        check_same_grid(g.grid(), self.field().grid())?;
        let grid = g.grid().clone();
        let nd = grid.ndim();
        let n = grid.len();
        let mut adj: Vec<Vec<f64>> = g.channels().to_vec();
        for psi in self.trace[..self.steps].iter().rev() {
            // psi_next = psi + psi∘(Id + psi): identity path, value path and
            // sampling-coordinate path.
            let st = stencils(psi);
            let mut next = adj.clone();
            for c in 0..nd {
                let scattered = scatter(&st, &adj[c], n);
                for (o, s) in next[c].iter_mut().zip(&scattered) {
                    *o += s;
                }
                let lane = psi.channel(c);
                for (x, s) in st.iter().enumerate() {
                    let gc = adj[c][x];
                    if gc != 0.0 {
                        for (d, nd_lane) in next.iter_mut().enumerate().take(nd) {
                            nd_lane[x] += gc * s.derivative(d, lane);
                        }
                    }
                }
            }
            adj = next;
        }
        let scale = 0.5_f64.powi(self.steps as i32);
        for lane in &mut adj {
            lane.iter_mut().for_each(|v| *v *= scale);
        }
        DenseField::new(grid, adj)
    }
}

/// `Exp(v)` by scaling and squaring: `ψ ← v / 2^steps`, then `steps` times
/// `ψ ← ψ + ψ∘(Id + ψ)`.
pub fn exp_velocity(v: &DenseField, steps: usize) -> Result<DenseField> {
    ScalingSquaring::forward(v, steps).map(ScalingSquaring::into_field)
}

/// Reverse-mode gradient through [`exp_velocity`]. Recomputes the forward
/// pass; keep a [`ScalingSquaring`] around to avoid that.
pub fn exp_velocity_adjoint(v: &DenseField, steps: usize, g: &DenseField) -> Result<DenseField> {
    ScalingSquaring::forward(v, steps)?.adjoint(g)
}

/// Jacobian determinant of `Id + φ` and the percentage of voxels where it is
/// negative.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianReport {
    pub det: Vec<f64>,
    pub folding_percent: f64,
}

/// Determinant of the deformation's Jacobian at every voxel, using forward
/// differences (backward at the far border).
pub fn jacobian(phi: &DenseField) -> JacobianReport {
    let grid = phi.grid();
    let dims = grid.dims();
    let strides = grid.strides();
    let nd = grid.ndim();
    let mut det = Vec::with_capacity(grid.len());
    let mut negative = 0usize;
    for f in 0..grid.len() {
        let idx = grid.unravel(f);
        let mut j = [[0.0; 3]; 3];
        for (d, &m) in dims.iter().enumerate() {
            let (lo, hi) = if idx[d] + 1 < m {
                (f, f + strides[d])
            } else {
                (f - strides[d], f)
            };
            for (c, row) in j.iter_mut().enumerate().take(nd) {
                let lane = phi.channel(c);
                row[d] = lane[hi] - lane[lo] + if c == d { 1.0 } else { 0.0 };
            }
        }
        let dv = if nd == 2 {
            j[0][0] * j[1][1] - j[0][1] * j[1][0]
        } else {
            j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
                - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
                + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0])
        };
        if dv < 0.0 {
            negative += 1;
        }
        det.push(dv);
    }
    JacobianReport {
        folding_percent: 100.0 * negative as f64 / grid.len() as f64,
        det,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use rand_core::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn uniform(rng: &mut Xoshiro256PlusPlus) -> f64 {
        (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn ramp_j(dims: &[usize]) -> ScalarImage {
        ScalarImage::from_fn(make_grid(dims).unwrap(), |x| x[1] as f64).unwrap()
    }

    #[test]
    fn identity_grid_lanes() {
        let g = make_grid(&[4, 6]).unwrap();
        let id = IdentityGrid::new(&g);
        assert_eq!(id.lanes()[0][g.ravel(&[3, 2])], 3.0);
        assert_eq!(id.lanes()[1][g.ravel(&[3, 2])], 2.0);
    }

    #[test]
    fn warp_zero_is_bit_exact() {
        let g = make_grid(&[6, 8, 4]).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(0);
        let img = ScalarImage::new(g.clone(), (0..g.len()).map(|_| uniform(&mut rng) * 10.0 - 5.0).collect()).unwrap();
        let out = warp(&img, &DenseField::zeros(g)).unwrap();
        assert_eq!(out.values(), img.values());
    }

    #[test]
    fn warp_integer_shift_clamps() {
        let dims = [6, 8];
        let g = make_grid(&dims).unwrap();
        let img = ramp_j(&dims);
        let out = warp(&img, &DenseField::constant(g.clone(), &[0.0, 1.0]).unwrap()).unwrap();
        for f in 0..g.len() {
            let j = g.unravel(f)[1];
            assert_eq!(out.values()[f], (j + 1).min(7) as f64);
        }
        // Same along axis 0 with a ramp in i.
        let img_i = ScalarImage::from_fn(g.clone(), |x| x[0] as f64).unwrap();
        let out = warp(&img_i, &DenseField::constant(g.clone(), &[1.0, 0.0]).unwrap()).unwrap();
        for f in 0..g.len() {
            assert_eq!(out.values()[f], (g.unravel(f)[0] + 1).min(5) as f64);
        }
    }

    #[test]
    fn warp_half_voxel_averages() {
        let dims = [6, 8];
        let g = make_grid(&dims).unwrap();
        let out = warp(&ramp_j(&dims), &DenseField::constant(g.clone(), &[0.0, 0.5]).unwrap()).unwrap();
        for f in 0..g.len() {
            let j = g.unravel(f)[1];
            let want = if j < 7 { j as f64 + 0.5 } else { 7.0 };
            assert_eq!(out.values()[f], want);
        }
    }

    #[test]
    fn warp_rejects_mismatch_and_nan() {
        let img = ramp_j(&[6, 8]);
        assert!(warp(&img, &DenseField::zeros(make_grid(&[8, 8]).unwrap())).is_err());
    }

    #[test]
    fn warp_field_examples() {
        let g = make_grid(&[6, 8]).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        let f = DenseField::new(g.clone(), (0..2).map(|_| (0..48).map(|_| uniform(&mut rng)).collect()).collect()).unwrap();
        assert_eq!(warp_field(&f, &DenseField::zeros(g.clone())).unwrap(), f);
        let phi = DenseField::new(g.clone(), (0..2).map(|_| (0..48).map(|_| uniform(&mut rng) * 4.0 - 2.0).collect()).collect()).unwrap();
        let cst = DenseField::constant(g.clone(), &[2.0, -3.0]).unwrap();
        let w = warp_field(&cst, &phi).unwrap();
        assert!(w.channel(0).iter().all(|&v| (v - 2.0).abs() < 1e-14));
        let lane = ScalarImage::new(g.clone(), phi.channel(1).to_vec()).unwrap();
        assert_eq!(warp_field(&phi, &phi).unwrap().channel(1), warp(&lane, &phi).unwrap().values());
    }

    #[test]
    fn warp_gradient_examples() {
        let dims = [6, 8];
        let g = make_grid(&dims).unwrap();
        let phi = DenseField::constant(g.clone(), &[0.3, 0.4]).unwrap();
        let flat = ScalarImage::new(g.clone(), vec![2.0; 48]).unwrap();
        let gr = warp_gradient(&flat, &phi, &[1.0; 48]).unwrap();
        assert!(gr.channels().iter().flatten().all(|&v| v == 0.0));
        let gr = warp_gradient(&ramp_j(&dims), &phi, &[1.0; 48]).unwrap();
        for f in 0..48 {
            let x = g.unravel(f);
            if x[0] < 5 && x[1] < 7 {
                assert!((gr.channel(1)[f] - 1.0).abs() < 1e-14);
                assert!(gr.channel(0)[f].abs() < 1e-14);
            }
        }
    }

    #[test]
    fn warp_gradient_finite_difference() {
        let g = make_grid(&[8, 10]).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        let img = ScalarImage::new(g.clone(), (0..80).map(|_| uniform(&mut rng)).collect()).unwrap();
        // Non-integer interior sample points.
        let phi = DenseField::new(g.clone(), (0..2).map(|_| (0..80).map(|_| uniform(&mut rng) * 2.0 - 1.0 + 0.013).collect()).collect()).unwrap();
        let gout: Vec<f64> = (0..80).map(|_| uniform(&mut rng) - 0.5).collect();
        let an = warp_gradient(&img, &phi, &gout).unwrap();
        let obj = |p: &DenseField| -> f64 { warp(&img, p).unwrap().values().iter().zip(&gout).map(|(a, b)| a * b).sum() };
        let h = 1e-7;
        for c in 0..2 {
            for f in 0..80 {
                let mut ch = phi.channels().to_vec();
                ch[c][f] += h;
                let up = obj(&DenseField::new(g.clone(), ch.clone()).unwrap());
                ch[c][f] -= 2.0 * h;
                let dn = obj(&DenseField::new(g.clone(), ch).unwrap());
                let fd = (up - dn) / (2.0 * h);
                let a = an.channel(c)[f];
                assert!((fd - a).abs() <= 1e-5 * fd.abs().max(a.abs()).max(1e-3), "{c} {f}: {fd} vs {a}");
            }
        }
    }

    #[test]
    fn warp_image_adjoint_is_transpose() {
        let g = make_grid(&[6, 8, 4]).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
        let n = g.len();
        let phi = DenseField::new(g.clone(), (0..3).map(|_| (0..n).map(|_| uniform(&mut rng) * 6.0 - 3.0).collect()).collect()).unwrap();
        let img = ScalarImage::new(g.clone(), (0..n).map(|_| uniform(&mut rng)).collect()).unwrap();
        let gout: Vec<f64> = (0..n).map(|_| uniform(&mut rng)).collect();
        let lhs: f64 = warp(&img, &phi).unwrap().values().iter().zip(&gout).map(|(a, b)| a * b).sum();
        let adj = warp_image_adjoint(&phi, &gout).unwrap();
        let rhs: f64 = img.values().iter().zip(&adj).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs());
    }

    #[test]
    fn exp_examples() {
        let g = make_grid(&[16, 16]).unwrap();
        let zero = exp_velocity(&DenseField::zeros(g.clone()), 7).unwrap();
        assert!(zero.channels().iter().flatten().all(|&v| v == 0.0));
        let c = DenseField::constant(g.clone(), &[1.5, -2.0]).unwrap();
        let e = exp_velocity(&c, 7).unwrap();
        for f in 0..g.len() {
            let x = g.unravel(f);
            if (3..12).contains(&x[0]) && (3..12).contains(&x[1]) {
                assert!((e.channel(0)[f] - 1.5).abs() < 1e-12);
                assert!((e.channel(1)[f] + 2.0).abs() < 1e-12);
            }
        }
        assert_eq!(exp_velocity(&c, 0).unwrap(), c);
    }

    #[test]
    fn exp_adjoint_trivial_cases() {
        let g = make_grid(&[8, 8]).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        let v = DenseField::new(g.clone(), (0..2).map(|_| (0..64).map(|_| uniform(&mut rng)).collect()).collect()).unwrap();
        let gr = DenseField::new(g.clone(), (0..2).map(|_| (0..64).map(|_| uniform(&mut rng)).collect()).collect()).unwrap();
        assert_eq!(exp_velocity_adjoint(&v, 0, &gr).unwrap(), gr);
        let z = exp_velocity_adjoint(&v, 7, &DenseField::zeros(g)).unwrap();
        assert!(z.channels().iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn jacobian_examples() {
        let g = make_grid(&[8, 10]).unwrap();
        let r = jacobian(&DenseField::zeros(g.clone()));
        assert!(r.det.iter().all(|&d| d == 1.0));
        assert_eq!(r.folding_percent, 0.0);

        let lin = DenseField::from_fn(g.clone(), |c, x| 0.5 * x[c] as f64).unwrap();
        let r = jacobian(&lin);
        assert!(r.det.iter().all(|&d| (d - 2.25).abs() < 1e-12));
        assert_eq!(r.folding_percent, 0.0);

        let g3 = make_grid(&[4, 6, 8]).unwrap();
        let lin3 = DenseField::from_fn(g3, |c, x| 0.5 * x[c] as f64).unwrap();
        assert!(jacobian(&lin3).det.iter().all(|&d| (d - 3.375).abs() < 1e-12));

        let fold = DenseField::from_fn(g, |c, x| if c == 0 { -2.0 * x[0] as f64 } else { 0.0 }).unwrap();
        let r = jacobian(&fold);
        assert!(r.det.iter().all(|&d| d < 0.0));
        assert_eq!(r.folding_percent, 100.0);
    }
}
