//! File formats: NIfTI-1 volumes, raw field manifests, and portable image
//! renders.

mod field;
mod nifti;
mod render;

pub use field::{read_field, read_manifest, write_field, FieldData, FieldKind, FieldManifest, RawDtype};
pub use nifti::{
    encode_nifti, parse_nifti, read_image, read_labels, read_nifti, write_image, write_labels,
    write_nifti, ByteOrder, NiftiWriteOptions, Volume, VolumeMeta, DT_FLOAT32, DT_FLOAT64,
    DT_INT16, DT_UINT8, HEADER_SIZE, VOX_OFFSET,
};
pub use render::{
    encode_pgm, encode_ppm, extract_slice, grid_ppm, log_spectrum, render_grid, render_slice,
    render_spectrum, slice_pgm, spectrum_pgm, to_gray, Slice, BACKGROUND, FLAT_GRAY, LINE,
};
