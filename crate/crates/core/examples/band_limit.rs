//! Decode a low-resolution parameter field to a full-resolution displacement,
//! then check that encoding recovers it and that nothing leaks out of band.
//!
//!     cargo run --example band_limit

use bandreg::synth::SynthRng;
use bandreg::{make_grid, make_window, spectral, LowResField};

fn main() -> bandreg::Result<()> {
    let grid = make_grid(&[64, 96])?;
    let window = make_window(&grid, &[16, 24])?;
    println!(
        "grid {:?}, band {:?}: {} parameters per channel instead of {}",
        grid.dims(),
        window.band_dims(),
        window.band_len(),
        grid.len()
    );

    let mut rng = SynthRng::new(7);
    let channels = (0..2)
        .map(|_| (0..window.band_len()).map(|_| rng.normal()).collect())
        .collect();
    let s = LowResField::new(window.clone(), channels)?;

    let decoded = spectral::decode_detailed(&s)?;
    println!("decoded max |phi| = {:.3}, imaginary residual = {:.2e}", decoded.field.max_abs(), decoded.imag_residual);

    let leak = spectral::band_leakage(&decoded.field, &window)?;
    println!("out-of-band energy fraction = {:.2e}", leak.energy_fraction);

    // encode . decode is a projection: decoding the re-encoded field is exact.
    let enc = spectral::encode(&decoded.field, &window)?;
    let again = spectral::decode(&enc.low_res)?;
    let err = again
        .channels()
        .iter()
        .flatten()
        .zip(decoded.field.channels().iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("max |decode(encode(phi)) - phi| = {err:.2e}, discarded energy = {:.2e}", enc.discarded_energy_fraction);
    Ok(())
}
