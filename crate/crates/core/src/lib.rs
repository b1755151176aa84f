//! Registration of 2D and 3D images with deformation fields parameterized by
//! their band-limited Fourier representation.

pub mod cli;
pub mod deform;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod objective;
pub mod optimize;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{
    make_grid, make_window, BandSpectrum, CropWindow, DenseField, GridSpec, LabelMap, LowResField,
    ScalarImage,
};
