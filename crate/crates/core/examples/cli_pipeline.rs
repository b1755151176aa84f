//! The file-based workflow the `bandreg` binary exposes, driven through the
//! library entry point: synth -> register -> warp -> metrics.
//!
//!     cargo run --release --example cli_pipeline [-- OUT_DIR]

use std::path::PathBuf;

fn step(args: &[&str]) {
    let code = bandreg::cli::run(std::iter::once("bandreg").chain(args.iter().copied()));
    println!("bandreg {} -> exit {code}", args.join(" "));
    if code != 0 {
        std::process::exit(code);
    }
}

fn main() {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("bandreg_cli"));
    let d = |p: &str| dir.join(p).to_string_lossy().into_owned();
    step(&["synth", "--dims", "64,96", "--band", "16,24", "--seed", "3", "--out", &d("synth")]);
    step(&[
        "register",
        "--moving",
        &d("synth/moving.nii"),
        "--fixed",
        &d("synth/fixed.nii"),
        "--band",
        "16,24",
        "--diffeo",
        "--out",
        &d("reg"),
    ]);
    step(&["warp", "--image", &d("synth/labels_moving.nii"), "--field", &d("reg"), "--labels", "--out", &d("warped_labels.nii")]);
    step(&["metrics", "--a", &d("warped_labels.nii"), "--b", &d("synth/labels_fixed.nii"), "--field", &d("reg/phi.toml")]);
}
