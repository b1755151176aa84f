//! Per-pair registration by Adam over the low-resolution parameters.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::deform;
use crate::error::{Error, Result};
use crate::grid::{CropWindow, DenseField, LowResField, ScalarImage};
use crate::objective::{total_loss, LossConfig};
use crate::spectral;

/// Number of iterations over which the relative loss change is measured.
pub const CONVERGENCE_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub loss: LossConfig,
    pub diffeo: bool,
    pub band_dims: Vec<usize>,
    pub seed: u64,
    pub convergence_tol: f64,
    /// Log every n-th iteration at debug level; 0 disables.
    pub log_every: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            learning_rate: 0.05,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            loss: LossConfig::mse(),
            diffeo: false,
            band_dims: Vec::new(),
            seed: 0,
            convergence_tol: 1e-5,
            log_every: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if !(self.convergence_tol >= 0.0) {
            return bad(format!(
                "convergence_tol must be non-negative, got {}",
                self.convergence_tol
            ));
        }
        self.loss.validate()
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub u: Vec<f64>,
    /// Number of steps taken so far.
    pub t: u32,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            u: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &[f64],
    grad: &[f64],
    state: &AdamState,
    config: &OptimConfig,
) -> (Vec<f64>, AdamState) {
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let t = state.t + 1;
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    let mut next = AdamState {
        m: Vec::with_capacity(params.len()),
        u: Vec::with_capacity(params.len()),
        t,
    };
    let out = params
        .iter()
        .zip(grad)
        .zip(state.m.iter().zip(&state.u))
        .map(|((&p, &g), (&m, &u))| {
            let m = b1 * m + (1.0 - b1) * g;
            let u = b2 * u + (1.0 - b2) * g * g;
            next.m.push(m);
            next.u.push(u);
            p - config.learning_rate * (m / c1) / ((u / c2).sqrt() + config.adam_eps)
        })
        .collect();
    (out, next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    /// Loss at every evaluated parameter vector, in order.
    pub loss_trace: Vec<f64>,
    /// Loss of the returned parameters (the minimum of the trace).
    pub final_loss: f64,
    pub final_similarity: f64,
    pub final_smoothness: f64,
    /// Adam steps taken.
    pub iterations_run: usize,
    pub converged: bool,
    pub folding_percent: f64,
    /// Out-of-band spectral energy fraction of the returned displacement.
    pub out_of_band_energy: f64,
    pub wall_time: f64,
}

/// Output of [`register`].
#[derive(Debug, Clone)]
pub struct Registration {
    pub s: LowResField,
    pub phi: DenseField,
    pub report: RegistrationReport,
}

/// Registers `moving` onto `fixed`: finds low-resolution parameters whose
/// decoded displacement (or its exponential, in diffeomorphic mode) warps the
/// moving image onto the fixed one.
///
/// Starts from zero, runs Adam on the loss gradient, and stops after
/// `iterations` steps or when the loss changes by less than
/// `convergence_tol` (relative) over [`CONVERGENCE_WINDOW`] iterations. The
/// lowest-loss parameters seen are returned.
pub fn register(
    moving: &ScalarImage,
    fixed: &ScalarImage,
    config: &OptimConfig,
) -> Result<Registration> {
    config.validate()?;
    if moving.grid() != fixed.grid() {
        return Err(Error::ShapeMismatch(format!(
            "moving {:?} vs fixed {:?}",
            moving.grid().dims(),
            fixed.grid().dims()
        )));
    }
    let window = CropWindow::new(moving.grid(), &config.band_dims)?;
    let start = Instant::now();

    let mut params = vec![0.0; window.band_len() * window.ndim()];
    let mut state = AdamState::new(params.len());
    let mut trace = Vec::with_capacity(config.iterations + 1);
    let mut best: Option<(f64, Vec<f64>, f64, f64)> = None;
    let mut converged = false;
    let mut steps = 0;
    loop {
        let s = LowResField::from_flat(window.clone(), &params)?;
        let eval = total_loss(&s, moving, fixed, &config.loss, config.diffeo)?;
        if !eval.loss.is_finite() || eval.grad.to_flat().iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { iteration: steps });
        }
        trace.push(eval.loss);
        if config.log_every > 0 && steps % config.log_every == 0 {
            log::debug!(
                "iter {steps}: loss {:.6e} sim {:.6e} smooth {:.6e}",
                eval.loss,
                eval.similarity,
                eval.smoothness
            );
        }
        if best.as_ref().is_none_or(|b| eval.loss < b.0) {
            best = Some((eval.loss, params.clone(), eval.similarity, eval.smoothness));
        }
        if trace.len() > CONVERGENCE_WINDOW {
            let old = trace[trace.len() - 1 - CONVERGENCE_WINDOW];
            if (old - eval.loss).abs() <= config.convergence_tol * old.abs().max(eval.loss.abs()) {
                converged = true;
                break;
            }
        }
        if steps == config.iterations {
            break;
        }
        let (p, st) = adam_step(&params, &eval.grad.to_flat(), &state, config);
        params = p;
        state = st;
        steps += 1;
    }

    let (final_loss, best_params, final_similarity, final_smoothness) =
        best.expect("at least one evaluation");
    let s = LowResField::from_flat(window.clone(), &best_params)?;
    let decoded = spectral::decode(&s)?;
    let phi = if config.diffeo {
        deform::exp_velocity(&decoded, deform::DEFAULT_SQUARING_STEPS)?
    } else {
        decoded
    };
    let folding_percent = deform::jacobian(&phi).folding_percent;
    let out_of_band_energy = spectral::band_leakage(&phi, &window)?.energy_fraction;
    Ok(Registration {
        s,
        phi,
        report: RegistrationReport {
            loss_trace: trace,
            final_loss,
            final_similarity,
            final_smoothness,
            iterations_run: steps,
            converged,
            folding_percent,
            out_of_band_energy,
            wall_time: start.elapsed().as_secs_f64(),
        },
    })
}
