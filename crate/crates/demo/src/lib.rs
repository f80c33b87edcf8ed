//! Browser demo: free-phase relaxation, a sleep-phase spike raster and the
//! GA on a sphere objective, all on small synthetic networks.

use wasm_bindgen::prelude::*;

use somnus::analysis::Histogram;
use somnus::ep_model::{relax, EpHyperParams, NetworkParams, NeuronState};
use somnus::hyperopt::{ga_optimize, sphere, GaConfig};
use somnus::numerics::Rng;
use somnus::src_sleep::{sleep_observed, InputRates, SleepParams};

/// Side of the square synthetic input image.
pub const SIDE: usize = 8;
pub const N_OUT: usize = 10;

fn to_js(e: somnus::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A blurred diagonal stroke: a stand-in for a digit.
pub fn stroke_image() -> Vec<f64> {
    let mut x = vec![0.0; SIDE * SIDE];
    for r in 0..SIDE {
        for c in 0..SIDE {
            let d = (r as f64 - c as f64).abs();
            x[r * SIDE + c] = (1.0 - d / 2.0).max(0.0);
        }
    }
    x
}

/// Per-step L2 norm of the state change during a free phase.
pub fn relaxation_norms(hidden: usize, steps: usize, dt: f64, gamma: f64, seed: u64) -> somnus::Result<Vec<f64>> {
    let p = NetworkParams::glorot(SIDE * SIDE, hidden, N_OUT, &mut Rng::seeded(seed));
    let h = EpHyperParams {
        dt,
        gamma,
        ..EpHyperParams::mnist()
    };
    h.validate()?;
    let r = relax(&stroke_image(), None, &p, &h, &NeuronState::for_params(&p), steps)?;
    Ok(r.step_norms)
}

#[wasm_bindgen]
pub fn relaxation_curve(hidden: usize, steps: usize, dt: f64, gamma: f64, seed: u64) -> Result<Vec<f64>, JsError> {
    relaxation_norms(hidden, steps, dt, gamma, seed).map_err(to_js)
}

/// Spikes and weight changes of one sleep phase.
#[wasm_bindgen]
pub struct SleepRun {
    n_hidden: usize,
    duration: usize,
    hidden: Vec<u8>,
    output: Vec<u8>,
    diff: Histogram,
}

#[wasm_bindgen]
impl SleepRun {
    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn duration(&self) -> usize {
        self.duration
    }

    /// Row-major `duration × n_hidden`, 1 where a hidden unit spiked.
    pub fn hidden_raster(&self) -> Vec<u8> {
        self.hidden.clone()
    }

    /// Row-major `duration × 10`.
    pub fn output_raster(&self) -> Vec<u8> {
        self.output.clone()
    }

    /// Histogram counts of the input→hidden weight change.
    pub fn diff_counts(&self) -> Vec<u32> {
        self.diff.counts.iter().map(|&c| c as u32).collect()
    }

    pub fn diff_lo(&self) -> f64 {
        self.diff.lo
    }

    pub fn diff_hi(&self) -> f64 {
        self.diff.hi
    }

    pub fn diff_mean(&self) -> f64 {
        self.diff.mean
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run_sleep(
    n_hidden: usize,
    duration: usize,
    scale: f64,
    threshold: f64,
    inc: f64,
    dec: f64,
    seed: u64,
    bins: usize,
) -> somnus::Result<SleepRun> {
    let mut rng = Rng::seeded(seed);
    let p = NetworkParams::glorot(SIDE * SIDE, n_hidden, N_OUT, &mut rng);
    let rates = InputRates::new(stroke_image().into())?;
    let sp = SleepParams {
        scale_ih: scale,
        scale_ho: scale,
        threshold_h: threshold,
        threshold_o: threshold,
        inc,
        dec,
        duration,
        feedback: true,
    };
    let mut hidden = Vec::with_capacity(duration * n_hidden);
    let mut output = Vec::with_capacity(duration * N_OUT);
    let (after, _) = sleep_observed(&p, &rates, &sp, &mut rng.fork(1), |s| {
        hidden.extend(s.hidden.iter().map(|&b| u8::from(b)));
        output.extend(s.output.iter().map(|&b| u8::from(b)));
    })?;
    let delta: Vec<f64> = after
        .w_ih
        .as_slice()
        .iter()
        .zip(p.w_ih.as_slice())
        .map(|(a, b)| a - b)
        .collect();
    Ok(SleepRun {
        n_hidden,
        duration,
        hidden,
        output,
        diff: Histogram::of(&delta, bins)?,
    })
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn sleep_raster(
    n_hidden: usize,
    duration: usize,
    scale: f64,
    threshold: f64,
    inc: f64,
    dec: f64,
    seed: u64,
    bins: usize,
) -> Result<SleepRun, JsError> {
    run_sleep(n_hidden, duration, scale, threshold, inc, dec, seed, bins).map_err(to_js)
}

/// Best-so-far genome norm after every generation of the GA on the
/// 7-dimensional sphere.
pub fn sphere_norms(population: usize, max_generations: usize, seed: u64) -> somnus::Result<Vec<f64>> {
    let cfg = GaConfig {
        population,
        max_generations: Some(max_generations),
        ..GaConfig::with_bounds(vec![[-5.0, 5.0]; 7])
    };
    let ga = ga_optimize(sphere, &cfg, &mut Rng::seeded(seed))?;
    Ok(ga.history.iter().map(|g| (-g.best_ever).sqrt()).collect())
}

#[wasm_bindgen]
pub fn ga_sphere(population: usize, max_generations: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    sphere_norms(population, max_generations, seed).map_err(to_js)
}
