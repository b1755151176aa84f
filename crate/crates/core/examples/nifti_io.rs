//! Write and read NIfTI-1 volumes (plain, gzipped, big-endian) and raw
//! field files.
//!
//!     cargo run --example nifti_io [-- OUT_DIR]

use std::path::PathBuf;

use bandreg::io::{self, ByteOrder, FieldData, NiftiWriteOptions, RawDtype};
use bandreg::{make_grid, DenseField, ScalarImage};

fn main() -> bandreg::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("bandreg_nifti_io"));
    std::fs::create_dir_all(&dir).map_err(|e| bandreg::Error::io(&dir, e))?;

    let grid = make_grid(&[12, 16, 20])?;
    let image = ScalarImage::from_fn(grid.clone(), |x| (x[0] * 100 + x[1] * 10 + x[2]) as f64)?;
    for (name, opts) in [
        ("vol.nii", NiftiWriteOptions::default()),
        ("vol.nii.gz", NiftiWriteOptions::default()),
        ("vol_be.nii", NiftiWriteOptions { byte_order: ByteOrder::Big, ..Default::default() }),
    ] {
        let p = dir.join(name);
        io::write_nifti(&p, grid.dims(), image.values(), None, opts)?;
        let vol = io::read_nifti(&p)?;
        println!(
            "{name}: dims {:?}, {:?} endian, exact round trip = {}",
            vol.meta.dims,
            vol.meta.byte_order,
            vol.data == image.values()
        );
    }

    let phi = DenseField::from_fn(grid, |c, x| 0.1 * (c + x[0]) as f64)?;
    let p = dir.join("phi.toml");
    io::write_field(&p, &FieldData::from(phi.clone()), RawDtype::Float64)?;
    let back = io::read_field(&p)?.into_dense()?;
    println!("phi.toml: {} channels, exact round trip = {}", back.channels().len(), back.channels() == phi.channels());
    println!("files in {}", dir.display());
    Ok(())
}
