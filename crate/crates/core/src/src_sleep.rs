//! Sleep-like replay: the trained network is run as an integrate-and-fire
//! spiking network driven by Poisson input and its weights are reshaped by
//! spike-timing-dependent plasticity.
//!
//! The spiking network reuses the analogue weights as-is. Every step the
//! output layer is integrated first from the hidden spikes of the previous
//! step, then the hidden layer from the fresh input spikes plus feedback of
//! the previous output spikes through `W_hoᵀ`. A unit fires when its
//! potential exceeds its layer threshold and is then reset to zero. There is
//! no leak and biases play no part.
//!
//! STDP (skipped on the first step) touches only synapses onto a unit that
//! just fired: `+inc` if the presynaptic unit was among the spikes that drove
//! this step, `−dec` otherwise.

use serde::{Deserialize, Serialize};

use crate::ep_model::NetworkParams;
use crate::error::{Error, Result};
use crate::numerics::{axpy, check_dims, Matrix, Rng, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SleepParams {
    pub scale_ih: f64,
    pub scale_ho: f64,
    pub threshold_h: f64,
    pub threshold_o: f64,
    pub inc: f64,
    pub dec: f64,
    /// Number of simulated time steps.
    pub duration: usize,
    #[serde(default = "default_feedback")]
    pub feedback: bool,
}

fn default_feedback() -> bool {
    true
}

impl Default for SleepParams {
    /// Mid-range, untuned values.
    fn default() -> Self {
        Self {
            scale_ih: 1.0,
            scale_ho: 1.0,
            threshold_h: 1.0,
            threshold_o: 1.0,
            inc: 0.001,
            dec: 0.001,
            duration: 1000,
            feedback: true,
        }
    }
}

impl SleepParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.threshold_h > 0.0
            && self.threshold_o > 0.0
            && self.inc >= 0.0
            && self.dec >= 0.0
            && self.duration >= 1
            && [
                self.scale_ih,
                self.scale_ho,
                self.threshold_h,
                self.threshold_o,
                self.inc,
                self.dec,
            ]
            .iter()
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid sleep parameters {self:?}")))
        }
    }
}

/// Per-input firing probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputRates(Vector);

impl InputRates {
    pub fn new(rates: Vector) -> Result<Self> {
        if rates.iter().all(|r| (0.0..=1.0).contains(r)) {
            Ok(Self(rates))
        } else {
            Err(Error::InvalidArgument("input rates must lie in [0, 1]".into()))
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One Bernoulli draw per input: element `i` fires with probability `rates[i]`.
pub fn poisson_input(rates: &InputRates, rng: &mut Rng) -> Vec<bool> {
    rates.as_slice().iter().map(|&r| rng.bernoulli(r)).collect()
}

/// Membrane potentials and the most recent spikes of each layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeState {
    pub v_h: Vector,
    pub v_o: Vector,
    pub spikes_in: Vec<bool>,
    pub spikes_h: Vec<bool>,
    pub spikes_o: Vec<bool>,
}

impl SpikeState {
    pub fn new(n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        Self {
            v_h: Vector::zeros(n_hidden),
            v_o: Vector::zeros(n_out),
            spikes_in: vec![false; n_in],
            spikes_h: vec![false; n_hidden],
            spikes_o: vec![false; n_out],
        }
    }
}

/// STDP on `w` (post × pre): rows of firing post units gain `inc` where the
/// pre unit fired and lose `dec` where it did not.
pub fn stdp_update(w: &mut Matrix, pre: &[bool], post: &[bool], inc: f64, dec: f64) -> Result<()> {
    check_dims("stdp pre", w.cols(), pre.len())?;
    check_dims("stdp post", w.rows(), post.len())?;
    for (r, _) in post.iter().enumerate().filter(|(_, &s)| s) {
        for (wv, &p) in w.row_mut(r).iter_mut().zip(pre) {
            *wv += if p { inc } else { -dec };
        }
    }
    Ok(())
}

/// What an observer sees after each simulated step.
pub struct SleepStep<'a> {
    /// 1-based step index.
    pub t: usize,
    pub input: &'a [bool],
    pub hidden: &'a [bool],
    pub output: &'a [bool],
    /// Potentials after integration, before the reset.
    pub v_h: &'a [f64],
    pub v_o: &'a [f64],
    w_ih_t: &'a Matrix,
    w_ho: &'a Matrix,
}

impl SleepStep<'_> {
    /// Current input→hidden weight from input `i` to hidden `j`.
    pub fn w_ih(&self, j: usize, i: usize) -> f64 {
        self.w_ih_t.get(i, j)
    }

    pub fn w_ho(&self, k: usize, j: usize) -> f64 {
        self.w_ho.get(k, j)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SleepStats {
    pub input_spikes: u64,
    pub hidden_spikes: u64,
    pub output_spikes: u64,
}

/// Runs the sleep phase and returns the updated parameters. Biases are
/// copied through unchanged.
pub fn sleep(p: &NetworkParams, rates: &InputRates, sp: &SleepParams, rng: &mut Rng) -> Result<NetworkParams> {
    sleep_observed(p, rates, sp, rng, |_| {}).map(|(p, _)| p)
}

pub fn sleep_observed(
    p: &NetworkParams,
    rates: &InputRates,
    sp: &SleepParams,
    rng: &mut Rng,
    mut observe: impl FnMut(&SleepStep<'_>),
) -> Result<(NetworkParams, SleepStats)> {
    sp.validate()?;
    p.check()?;
    check_dims("sleep input rates", p.n_in(), rates.len())?;
    let (n_in, n_h, n_o) = (p.n_in(), p.n_hidden(), p.n_out());

    // Input-major copy so each input spike adds one contiguous row.
    let mut w_ih_t = p.w_ih.transpose();
    let mut w_ho = p.w_ho.clone();
    let mut st = SpikeState::new(n_in, n_h, n_o);
    let mut prev_h = vec![false; n_h];
    let mut prev_o = vec![false; n_o];
    let mut active_in: Vec<usize> = Vec::with_capacity(n_in);
    let mut active_h: Vec<usize> = Vec::with_capacity(n_h);
    let mut prev_active_h: Vec<usize> = Vec::with_capacity(n_h);
    let mut stats = SleepStats::default();

    for t in 1..=sp.duration {
        active_in.clear();
        for (i, (&r, s)) in rates.as_slice().iter().zip(st.spikes_in.iter_mut()).enumerate() {
            *s = rng.bernoulli(r);
            if *s {
                active_in.push(i);
            }
        }
        stats.input_spikes += active_in.len() as u64;

        // Output layer, driven by last step's hidden spikes.
        for k in 0..n_o {
            let row = w_ho.row(k);
            let drive: f64 = prev_active_h.iter().map(|&j| row[j]).sum();
            st.v_o[k] += sp.scale_ho * drive;
            st.spikes_o[k] = st.v_o[k] > sp.threshold_o;
        }
        if t != 1 {
            stdp_update(&mut w_ho, &prev_h, &st.spikes_o, sp.inc, sp.dec)?;
        }

        // Hidden layer, driven by fresh input spikes plus output feedback.
        let mut drive = vec![0.0; n_h];
        for &i in &active_in {
            axpy(1.0, w_ih_t.row(i), &mut drive);
        }
        if sp.feedback {
            for k in (0..n_o).filter(|&k| prev_o[k]) {
                axpy(1.0, w_ho.row(k), &mut drive);
            }
        }
        active_h.clear();
        for (j, &d) in drive.iter().enumerate() {
            st.v_h[j] += sp.scale_ih * d;
            st.spikes_h[j] = st.v_h[j] > sp.threshold_h;
            if st.spikes_h[j] {
                active_h.push(j);
            }
        }
        if t != 1 && !active_h.is_empty() {
            for (i, &fired) in st.spikes_in.iter().enumerate() {
                let delta = if fired { sp.inc } else { -sp.dec };
                if delta != 0.0 {
                    let row = w_ih_t.row_mut(i);
                    for &j in &active_h {
                        row[j] += delta;
                    }
                }
            }
        }

        observe(&SleepStep {
            t,
            input: &st.spikes_in,
            hidden: &st.spikes_h,
            output: &st.spikes_o,
            v_h: &st.v_h,
            v_o: &st.v_o,
            w_ih_t: &w_ih_t,
            w_ho: &w_ho,
        });

        stats.hidden_spikes += active_h.len() as u64;
        stats.output_spikes += st.spikes_o.iter().filter(|&&s| s).count() as u64;
        for (v, &s) in st.v_h.iter_mut().zip(&st.spikes_h) {
            if s {
                *v = 0.0;
            }
        }
        for (v, &s) in st.v_o.iter_mut().zip(&st.spikes_o) {
            if s {
                *v = 0.0;
            }
        }
        prev_h.copy_from_slice(&st.spikes_h);
        prev_o.copy_from_slice(&st.spikes_o);
        std::mem::swap(&mut prev_active_h, &mut active_h);
    }

    let out = NetworkParams {
        w_ih: w_ih_t.transpose(),
        w_ho,
        b_h: p.b_h.clone(),
        b_o: p.b_o.clone(),
    };
    if !(out.w_ih.is_finite() && out.w_ho.is_finite()) {
        return Err(Error::NonFinite("sleep weights"));
    }
    Ok((out, stats))
}

/// Result of one sleep phase with the weights on either side of it.
#[derive(Debug, Clone)]
pub struct SrcOutcome {
    pub before: NetworkParams,
    pub after: NetworkParams,
    pub stats: SleepStats,
}

/// Converts to the spiking network (same weights), sleeps, and maps the
/// result back.
pub fn src_phase(p: &NetworkParams, rates: &InputRates, sp: &SleepParams, rng: &mut Rng) -> Result<SrcOutcome> {
    let (after, stats) = sleep_observed(p, rates, sp, rng, |_| {})?;
    Ok(SrcOutcome {
        before: p.clone(),
        after,
        stats,
    })
}
