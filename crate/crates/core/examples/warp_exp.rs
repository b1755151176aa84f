//! Warp an image by a displacement, and turn a stationary velocity into a
//! diffeomorphic displacement by scaling and squaring.
//!
//!     cargo run --example warp_exp

use bandreg::synth::SynthRng;
use bandreg::{deform, make_grid, make_window, spectral, LowResField, ScalarImage};

fn main() -> bandreg::Result<()> {
    let grid = make_grid(&[64, 64])?;
    let image = ScalarImage::from_fn(grid.clone(), |x| (x[0] as f64 / 6.0).sin() * (x[1] as f64 / 9.0).cos())?;

    let window = make_window(&grid, &[8, 8])?;
    let mut rng = SynthRng::new(1);
    let channels = (0..2).map(|_| (0..64).map(|_| rng.normal()).collect()).collect();
    let v = spectral::decode(&LowResField::new(window, channels)?)?;
    let v = v.scaled(12.0 / v.max_abs());
    println!("velocity max |v| = {:.2}", v.max_abs());

    let raw = deform::jacobian(&v);
    println!("used directly as a displacement: {:.3}% folded voxels", raw.folding_percent);

    let phi = deform::exp_velocity(&v, 7)?;
    let jac = deform::jacobian(&phi);
    let min_det = jac.det.iter().cloned().fold(f64::INFINITY, f64::min);
    println!(
        "after exp (7 squarings): max |phi| = {:.2}, min det J = {:.3}, {:.3}% folded",
        phi.max_abs(),
        min_det,
        jac.folding_percent
    );

    let warped = deform::warp(&image, &phi)?;
    let moved = image
        .values()
        .iter()
        .zip(warped.values())
        .filter(|(a, b)| (*a - *b).abs() > 1e-3)
        .count();
    println!("warp changed {moved} of {} voxels", grid.len());
    Ok(())
}
