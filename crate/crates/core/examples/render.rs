//! Preview renders: an image slice (PGM), the deformed grid (PPM) and the
//! log-magnitude spectrum of a displacement channel (PGM).
//!
//!     cargo run --example render [-- OUT_DIR]

use std::path::PathBuf;

use bandreg::io;
use bandreg::synth::{make_pair, SynthConfig};

fn main() -> bandreg::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("bandreg_render"));
    std::fs::create_dir_all(&dir).map_err(|e| bandreg::Error::io(&dir, e))?;

    let pair = make_pair(&SynthConfig { amplitude: 5.0, ..SynthConfig::default() })?;
    io::render_slice(&pair.moving, 0, 0, dir.join("moving.pgm"))?;
    io::render_slice(&pair.fixed, 0, 0, dir.join("fixed.pgm"))?;
    io::render_grid(&pair.phi_gt, 4, 0, 0, dir.join("grid.ppm"))?;
    io::render_spectrum(&pair.phi_gt, 0, 0, 0, dir.join("spectrum_c0.pgm"))?;
    println!("wrote moving.pgm, fixed.pgm, grid.ppm, spectrum_c0.pgm to {}", dir.display());
    Ok(())
}
