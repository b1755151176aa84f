//! Dice, HD95 and folding on small hand-made label maps.
//!
//!     cargo run --example label_metrics

use bandreg::{deform, make_grid, metrics, DenseField, LabelMap};

fn disc(grid: &bandreg::GridSpec, c: (f64, f64), r: f64, label: u32) -> Vec<u32> {
    (0..grid.len())
        .map(|f| {
            let x = grid.unravel(f);
            let d = ((x[0] as f64 - c.0).powi(2) + (x[1] as f64 - c.1).powi(2)).sqrt();
            if d <= r { label } else { 0 }
        })
        .collect()
}

fn main() -> bandreg::Result<()> {
    let grid = make_grid(&[48, 48])?;
    let a = LabelMap::new(grid.clone(), disc(&grid, (24.0, 24.0), 10.0, 1))?;
    let b = LabelMap::new(grid.clone(), disc(&grid, (24.0, 27.0), 10.0, 1))?;

    let report = metrics::evaluate(&a, &b, None, None)?;
    println!("disc shifted by 3 voxels: Dice {:.3}, HD95 {:.2}", report.dice_mean, report.hd95_mean);

    // A displacement that swaps neighbouring columns folds the grid.
    let phi = DenseField::from_fn(grid.clone(), |c, x| if c == 1 && x[1] % 2 == 0 { 1.5 } else { 0.0 })?;
    println!("folding of the zero field: {:.1}%", deform::jacobian(&DenseField::zeros(grid)).folding_percent);
    println!("folding of the column-swap field: {:.1}%", deform::jacobian(&phi).folding_percent);
    Ok(())
}
