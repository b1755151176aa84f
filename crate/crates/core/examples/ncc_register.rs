//! Local NCC handles an intensity remap between the images where MSE does not.
//!
//!     cargo run --release --example ncc_register

use bandreg::objective::LossConfig;
use bandreg::optimize::{register, OptimConfig};
use bandreg::synth::{make_pair, SynthConfig};
use bandreg::{metrics, ScalarImage};

fn main() -> bandreg::Result<()> {
    let synth = SynthConfig { seed: 4, ..SynthConfig::default() };
    let pair = make_pair(&synth)?;
    // The fixed image sees a gamma remap of intensities.
    let fixed = ScalarImage::new(
        pair.fixed.grid().clone(),
        pair.fixed.values().iter().map(|v| v.clamp(0.0, 1.0).powf(1.5)).collect(),
    )?;

    for (name, loss) in [("mse", LossConfig::mse()), ("ncc", LossConfig::ncc())] {
        let config = OptimConfig { band_dims: synth.band_dims.clone(), loss, ..OptimConfig::default() };
        let reg = register(&pair.moving, &fixed, &config)?;
        let warped = metrics::warp_labels(&pair.labels_moving, &reg.phi)?;
        let dice = metrics::evaluate(&warped, &pair.labels_fixed, None, None)?.dice_mean;
        println!("{name}: {} iterations, Dice {dice:.3}", reg.report.iterations_run);
    }
    Ok(())
}
