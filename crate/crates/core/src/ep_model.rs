//! Convergent input→hidden→output recurrent network trained with
//! Equilibrium Propagation.
//!
//! The output layer feeds back into the hidden layer through the transpose
//! of the hidden→output weights, scaled by `gamma`. Both layers are relaxed
//! with a synchronous Euler scheme:
//!
//! ```text
//! s_o ← s_o + dt·(−s_o + hardsig(W_ho s_h + b_o) [+ β(y − s_o)])
//! s_h ← s_h + dt·(−s_h + relu(W_ih x + γ W_hoᵀ s_o + b_h))
//! ```
//!
//! The bracketed nudge is only present in the clamped phase. Hidden units are
//! ReLU, outputs are a hard sigmoid (clamp to `[0, 1]`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::numerics::{argmax, axpy, check_dims, dot, gemm, hard_sigmoid_scalar, MatView, Matrix, Rng, Vector};

const SNAPSHOT_MAGIC: &[u8] = b"SOMNUS-NET v1\n";

/// Which contrastive update is applied after the two phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningRule {
    /// `Δw = (α/β)·ŝ_pre·(ŝ_post − š_post)`.
    #[default]
    Predictive,
    /// `Δw = (α/β)·(ŝ_pre ŝ_post − š_pre š_post)`.
    Contrastive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpHyperParams {
    /// Learning rate for input→hidden weights and hidden biases.
    pub alpha_ih: f64,
    /// Learning rate for hidden→output weights and output biases.
    pub alpha_ho: f64,
    pub beta: f64,
    pub dt: f64,
    pub gamma: f64,
    pub free_steps: usize,
    pub clamped_steps: usize,
    pub batch_size: usize,
    pub epochs_per_task: usize,
    #[serde(default)]
    pub rule: LearningRule,
}

impl EpHyperParams {
    pub fn mnist() -> Self {
        Self {
            alpha_ih: 0.03,
            alpha_ho: 0.001,
            beta: 1.0,
            dt: 0.2,
            gamma: 1.0,
            free_steps: 100,
            clamped_steps: 10,
            batch_size: 256,
            epochs_per_task: 3,
            rule: LearningRule::Predictive,
        }
    }

    pub fn fmnist() -> Self {
        Self {
            free_steps: 125,
            clamped_steps: 15,
            ..Self::mnist()
        }
    }

    pub fn kmnist() -> Self {
        Self::fmnist()
    }

    pub fn cifar10() -> Self {
        Self {
            alpha_ih: 0.08,
            epochs_per_task: 5,
            ..Self::fmnist()
        }
    }

    pub fn imagenet() -> Self {
        Self::cifar10()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return bad("dt must lie in (0, 1]");
        }
        // Negated so that NaN is rejected too.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.beta > 0.0) {
            return bad("beta must be positive");
        }
        if self.free_steps == 0 || self.clamped_steps == 0 {
            return bad("relaxation step counts must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        Ok(())
    }
}

/// Learnable weights and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    /// hidden × input
    pub w_ih: Matrix,
    /// output × hidden; its transpose is the feedback path.
    pub w_ho: Matrix,
    pub b_h: Vector,
    pub b_o: Vector,
}

impl NetworkParams {
    pub fn zeros(n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        Self {
            w_ih: Matrix::zeros(n_hidden, n_in),
            w_ho: Matrix::zeros(n_out, n_hidden),
            b_h: Vector::zeros(n_hidden),
            b_o: Vector::zeros(n_out),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(n_in: usize, n_hidden: usize, n_out: usize, rng: &mut Rng) -> Self {
        let lim_ih = (6.0 / (n_in + n_hidden) as f64).sqrt();
        let lim_ho = (6.0 / (n_hidden + n_out) as f64).sqrt();
        let w_ih = Matrix::from_fn(n_hidden, n_in, |_, _| rng.range(-lim_ih, lim_ih));
        let w_ho = Matrix::from_fn(n_out, n_hidden, |_, _| rng.range(-lim_ho, lim_ho));
        Self {
            w_ih,
            w_ho,
            b_h: Vector::zeros(n_hidden),
            b_o: Vector::zeros(n_out),
        }
    }

    pub fn n_in(&self) -> usize {
        self.w_ih.cols()
    }

    pub fn n_hidden(&self) -> usize {
        self.w_ih.rows()
    }

    pub fn n_out(&self) -> usize {
        self.w_ho.rows()
    }

    pub fn check(&self) -> Result<()> {
        check_dims("NetworkParams w_ho cols", self.n_hidden(), self.w_ho.cols())?;
        check_dims("NetworkParams b_h", self.n_hidden(), self.b_h.len())?;
        check_dims("NetworkParams b_o", self.n_out(), self.b_o.len())?;
        if !(self.w_ih.is_finite() && self.w_ho.is_finite() && self.b_h.is_finite() && self.b_o.is_finite()) {
            return Err(Error::NonFinite("NetworkParams"));
        }
        Ok(())
    }

    /// Binary snapshot: magic line, three little-endian u64 layer sizes
    /// (input, hidden, output), then little-endian f64 values of `w_ih`,
    /// `w_ho`, `b_h`, `b_o`, each row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.w_ih.as_slice().len() + self.w_ho.as_slice().len() + self.b_h.len() + self.b_o.len();
        let mut buf = Vec::with_capacity(SNAPSHOT_MAGIC.len() + 24 + 8 * n);
        buf.extend_from_slice(SNAPSHOT_MAGIC);
        for d in [self.n_in(), self.n_hidden(), self.n_out()] {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for part in [
            self.w_ih.as_slice(),
            self.w_ho.as_slice(),
            self.b_h.as_slice(),
            self.b_o.as_slice(),
        ] {
            for v in part {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: "<snapshot>".into(),
            reason: reason.to_string(),
        };
        let rest = bytes
            .strip_prefix(SNAPSHOT_MAGIC)
            .ok_or_else(|| bad("missing SOMNUS-NET v1 header"))?;
        if rest.len() < 24 {
            return Err(bad("truncated layer sizes"));
        }
        let size = |k: usize| u64::from_le_bytes(rest[k * 8..k * 8 + 8].try_into().unwrap()) as usize;
        let (n_in, n_hidden, n_out) = (size(0), size(1), size(2));
        let counts = [n_hidden * n_in, n_out * n_hidden, n_hidden, n_out];
        let total: usize = counts.iter().sum();
        let body = &rest[24..];
        if body.len() != total * 8 {
            return Err(bad("payload length does not match layer sizes"));
        }
        let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };
        let w_ih = Matrix::from_vec(n_hidden, n_in, take(counts[0]))?;
        let w_ho = Matrix::from_vec(n_out, n_hidden, take(counts[1]))?;
        let b_h = Vector::from(take(counts[2]));
        let b_o = Vector::from(take(counts[3]));
        let p = Self { w_ih, w_ho, b_h, b_o };
        p.check()?;
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path)?).map_err(|e| match e {
            Error::Format { reason, .. } => Error::Format {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronState {
    pub s_h: Vector,
    pub s_o: Vector,
}

impl NeuronState {
    pub fn zeros(n_hidden: usize, n_out: usize) -> Self {
        Self {
            s_h: Vector::zeros(n_hidden),
            s_o: Vector::zeros(n_out),
        }
    }

    pub fn for_params(p: &NetworkParams) -> Self {
        Self::zeros(p.n_hidden(), p.n_out())
    }
}

/// Final state of a relaxation and the L2 norm of the state change at every step.
#[derive(Debug, Clone)]
pub struct Relaxation {
    pub state: NeuronState,
    pub step_norms: Vec<f64>,
}

impl Relaxation {
    pub fn last_step_norm(&self) -> f64 {
        self.step_norms.last().copied().unwrap_or(0.0)
    }
}

/// Layered Hopfield energy
/// `½‖s‖² − s_hᵀW_ih x − s_oᵀW_ho s_h − b_h·s_h − b_o·s_o`, with `x` clamped.
pub fn energy(state: &NeuronState, x: &[f64], p: &NetworkParams) -> Result<f64> {
    check_dims("energy input", p.n_in(), x.len())?;
    check_dims("energy hidden", p.n_hidden(), state.s_h.len())?;
    check_dims("energy output", p.n_out(), state.s_o.len())?;
    let quad = 0.5 * (dot(&state.s_h, &state.s_h) + dot(&state.s_o, &state.s_o));
    let ih = dot(&state.s_h, &p.w_ih.matvec(x)?);
    let ho = dot(&state.s_o, &p.w_ho.matvec(&state.s_h)?);
    let bias = dot(&state.s_h, &p.b_h) + dot(&state.s_o, &p.b_o);
    Ok(quad - ih - ho - bias)
}

/// Scratch buffers for one relaxation, reused across samples.
struct Scratch {
    fb: Vec<f64>,
    new_h: Vec<f64>,
    new_o: Vec<f64>,
}

impl Scratch {
    fn new(n_hidden: usize, n_out: usize) -> Self {
        Self {
            fb: vec![0.0; n_hidden],
            new_h: vec![0.0; n_hidden],
            new_o: vec![0.0; n_out],
        }
    }
}

/// Runs `steps` synchronous Euler steps in place. `drive` is the constant
/// hidden input `W_ih x + b_h`. Returns the final step norm.
#[allow(clippy::too_many_arguments)]
fn relax_in_place(
    drive: &[f64],
    p: &NetworkParams,
    h: &EpHyperParams,
    s_h: &mut [f64],
    s_o: &mut [f64],
    steps: usize,
    nudge: Option<(&[f64], f64)>,
    scratch: &mut Scratch,
    mut norms: Option<&mut Vec<f64>>,
) -> Result<f64> {
    let dt = h.dt;
    let mut last = 0.0;
    for step in 0..steps {
        let mut sq = 0.0;
        for (o, new) in scratch.new_o.iter_mut().enumerate() {
            let pre = dot(p.w_ho.row(o), s_h) + p.b_o[o];
            let mut ds = -s_o[o] + hard_sigmoid_scalar(pre);
            if let Some((y, beta)) = nudge {
                ds += beta * (y[o] - s_o[o]);
            }
            *new = s_o[o] + dt * ds;
        }
        p.w_ho.matvec_t_into(s_o, &mut scratch.fb);
        for j in 0..s_h.len() {
            let pre = drive[j] + h.gamma * scratch.fb[j];
            let nh = s_h[j] + dt * (-s_h[j] + pre.max(0.0));
            let d = nh - s_h[j];
            sq += d * d;
            scratch.new_h[j] = nh;
        }
        for (old, &new) in s_o.iter_mut().zip(&scratch.new_o) {
            let d = new - *old;
            sq += d * d;
            *old = new;
        }
        s_h.copy_from_slice(&scratch.new_h);
        last = sq.sqrt();
        if !last.is_finite() {
            return Err(Error::Divergence { step: step + 1 });
        }
        if let Some(n) = norms.as_deref_mut() {
            n.push(last);
        }
    }
    Ok(last)
}

/// Row-major buffers for relaxing up to `cap` samples together.
struct Batch {
    n_hidden: usize,
    n_out: usize,
    drive: Vec<f64>,
    s_h: Vec<f64>,
    s_o: Vec<f64>,
    o_pre: Vec<f64>,
    fb: Vec<f64>,
}

impl Batch {
    fn new(p: &NetworkParams, cap: usize) -> Self {
        let (hd, o) = (p.n_hidden(), p.n_out());
        Self {
            n_hidden: hd,
            n_out: o,
            drive: vec![0.0; cap * hd],
            s_h: vec![0.0; cap * hd],
            s_o: vec![0.0; cap * o],
            o_pre: vec![0.0; cap * o],
            fb: vec![0.0; cap * hd],
        }
    }

    fn reset(&mut self, n: usize) {
        self.s_h[..n * self.n_hidden].fill(0.0);
        self.s_o[..n * self.n_out].fill(0.0);
    }

    /// Same dynamics as `relax_in_place` for the first `n` rows at once.
    /// `nudge` holds `n` row-major targets. When `last_norms` is given it
    /// receives each row's final step norm.
    fn relax(
        &mut self,
        n: usize,
        p: &NetworkParams,
        h: &EpHyperParams,
        steps: usize,
        nudge: Option<(&[f64], f64)>,
        mut last_norms: Option<&mut [f64]>,
    ) -> Result<()> {
        let (hd, o, dt, g) = (self.n_hidden, self.n_out, h.dt, h.gamma);
        let s_h = &mut self.s_h[..n * hd];
        let s_o = &mut self.s_o[..n * o];
        let o_pre = &mut self.o_pre[..n * o];
        let fb = &mut self.fb[..n * hd];
        let drive = &self.drive[..n * hd];
        for step in 0..steps {
            let final_step = step + 1 == steps;
            for row in o_pre.chunks_exact_mut(o) {
                row.copy_from_slice(&p.b_o);
            }
            gemm(1.0, MatView::row_major(s_h, n, hd), p.w_ho.view().t(), 1.0, o_pre).expect("output shapes");
            gemm(1.0, MatView::row_major(s_o, n, o), p.w_ho.view(), 0.0, fb).expect("feedback shapes");

            for b in 0..n {
                let so = &mut s_o[b * o..(b + 1) * o];
                let pre = &o_pre[b * o..(b + 1) * o];
                let mut sq = 0.0;
                for k in 0..o {
                    let mut ds = -so[k] + hard_sigmoid_scalar(pre[k]);
                    if let Some((y, beta)) = nudge {
                        ds += beta * (y[b * o + k] - so[k]);
                    }
                    let d = dt * ds;
                    sq += d * d;
                    so[k] += d;
                }
                let sh = &mut s_h[b * hd..(b + 1) * hd];
                let dr = &drive[b * hd..(b + 1) * hd];
                let f = &fb[b * hd..(b + 1) * hd];
                if final_step && last_norms.is_some() {
                    for j in 0..hd {
                        let d = dt * (-sh[j] + (dr[j] + g * f[j]).max(0.0));
                        sq += d * d;
                        sh[j] += d;
                    }
                    if let Some(ns) = last_norms.as_deref_mut() {
                        ns[b] = sq.sqrt();
                    }
                } else {
                    for j in 0..hd {
                        sh[j] += dt * (-sh[j] + (dr[j] + g * f[j]).max(0.0));
                    }
                }
            }
        }
        // A non-finite hidden value never clears once it appears, and the
        // output inherits it through the next step, so one check suffices.
        if !(s_h.iter().all(|v| v.is_finite()) && s_o.iter().all(|v| v.is_finite())) {
            return Err(Error::Divergence { step: steps });
        }
        Ok(())
    }
}

fn hidden_drive(x: &[f64], p: &NetworkParams) -> Result<Vec<f64>> {
    let mut d = p.w_ih.matvec(x)?.into_inner();
    axpy(1.0, &p.b_h, &mut d);
    Ok(d)
}

fn check_state(init: &NeuronState, p: &NetworkParams) -> Result<()> {
    check_dims("initial hidden state", p.n_hidden(), init.s_h.len())?;
    check_dims("initial output state", p.n_out(), init.s_o.len())?;
    if !(init.s_h.is_finite() && init.s_o.is_finite()) {
        return Err(Error::NonFinite("initial state"));
    }
    Ok(())
}

/// Free relaxation for `free_steps` steps from `init`.
pub fn free_phase(x: &[f64], p: &NetworkParams, h: &EpHyperParams, init: &NeuronState) -> Result<Relaxation> {
    relax(x, None, p, h, init, h.free_steps)
}

/// Weakly clamped relaxation for `clamped_steps` steps; normally started
/// from the free fixed point.
pub fn clamped_phase(
    x: &[f64],
    y: &[f64],
    p: &NetworkParams,
    h: &EpHyperParams,
    init: &NeuronState,
) -> Result<Relaxation> {
    check_dims("clamped target", p.n_out(), y.len())?;
    relax(x, Some((y, h.beta)), p, h, init, h.clamped_steps)
}

/// Relaxation with an explicit step count and optional nudge `(y, β)`.
pub fn relax(
    x: &[f64],
    nudge: Option<(&[f64], f64)>,
    p: &NetworkParams,
    h: &EpHyperParams,
    init: &NeuronState,
    steps: usize,
) -> Result<Relaxation> {
    check_state(init, p)?;
    let drive = hidden_drive(x, p)?;
    let mut state = init.clone();
    let mut scratch = Scratch::new(p.n_hidden(), p.n_out());
    let mut norms = Vec::with_capacity(steps);
    relax_in_place(
        &drive,
        p,
        h,
        &mut state.s_h,
        &mut state.s_o,
        steps,
        nudge,
        &mut scratch,
        Some(&mut norms),
    )?;
    Ok(Relaxation {
        state,
        step_norms: norms,
    })
}

/// One-sample EP update. `x` is the clamped input (identical in both phases).
pub fn ep_weight_update(
    free: &NeuronState,
    clamped: &NeuronState,
    x: &[f64],
    p: &NetworkParams,
    h: &EpHyperParams,
) -> Result<NetworkParams> {
    check_dims("update input", p.n_in(), x.len())?;
    check_state(free, p)?;
    check_state(clamped, p)?;
    let mut out = p.clone();
    let mut acc = Accumulator::new(p, 1);
    acc.push(0, x, free, clamped);
    acc.apply(&mut out, h, 1);
    Ok(out)
}

/// Collects per-sample phase results of a minibatch so the update can be
/// applied with two matrix products.
struct Accumulator {
    n_hidden: usize,
    n_out: usize,
    inputs: Vec<f64>,
    d_h: Vec<f64>,
    d_o: Vec<f64>,
    clamped_h: Vec<f64>,
    clamped_o: Vec<f64>,
    free_h: Vec<f64>,
    free_o: Vec<f64>,
}

impl Accumulator {
    fn new(p: &NetworkParams, cap: usize) -> Self {
        let (i, hd, o) = (p.n_in(), p.n_hidden(), p.n_out());
        Self {
            n_hidden: hd,
            n_out: o,
            inputs: vec![0.0; cap * i],
            d_h: vec![0.0; cap * hd],
            d_o: vec![0.0; cap * o],
            clamped_h: vec![0.0; cap * hd],
            clamped_o: vec![0.0; cap * o],
            free_h: vec![0.0; cap * hd],
            free_o: vec![0.0; cap * o],
        }
    }

    fn push(&mut self, b: usize, x: &[f64], free: &NeuronState, clamped: &NeuronState) {
        self.push_raw(b, x, &free.s_h, &free.s_o, &clamped.s_h, &clamped.s_o);
    }

    fn push_raw(&mut self, b: usize, x: &[f64], fh: &[f64], fo: &[f64], ch: &[f64], co: &[f64]) {
        let (hd, o, i) = (self.n_hidden, self.n_out, x.len());
        self.inputs[b * i..(b + 1) * i].copy_from_slice(x);
        self.free_h[b * hd..(b + 1) * hd].copy_from_slice(fh);
        self.free_o[b * o..(b + 1) * o].copy_from_slice(fo);
        self.clamped_h[b * hd..(b + 1) * hd].copy_from_slice(ch);
        self.clamped_o[b * o..(b + 1) * o].copy_from_slice(co);
        for j in 0..hd {
            self.d_h[b * hd + j] = ch[j] - fh[j];
        }
        for k in 0..o {
            self.d_o[b * o + k] = co[k] - fo[k];
        }
    }

    /// Applies the mean update over the first `n` pushed samples.
    fn apply(&self, p: &mut NetworkParams, h: &EpHyperParams, n: usize) {
        let (i, hd, o) = (p.n_in(), self.n_hidden, self.n_out);
        let c_ih = h.alpha_ih / h.beta / n as f64;
        let c_ho = h.alpha_ho / h.beta / n as f64;
        let x = MatView::row_major(&self.inputs[..n * i], n, i);
        let d_h = MatView::row_major(&self.d_h[..n * hd], n, hd);
        let d_o = MatView::row_major(&self.d_o[..n * o], n, o);
        let ch = MatView::row_major(&self.clamped_h[..n * hd], n, hd);

        // The input is clamped in both phases, so both rules agree on W_ih.
        gemm(c_ih, d_h.t(), x, 1.0, p.w_ih.as_mut_slice()).expect("w_ih update shapes");
        match h.rule {
            LearningRule::Predictive => {
                gemm(c_ho, d_o.t(), ch, 1.0, p.w_ho.as_mut_slice()).expect("w_ho update shapes");
            }
            LearningRule::Contrastive => {
                let co = MatView::row_major(&self.clamped_o[..n * o], n, o);
                let fo = MatView::row_major(&self.free_o[..n * o], n, o);
                let fh = MatView::row_major(&self.free_h[..n * hd], n, hd);
                gemm(c_ho, co.t(), ch, 1.0, p.w_ho.as_mut_slice()).expect("w_ho update shapes");
                gemm(-c_ho, fo.t(), fh, 1.0, p.w_ho.as_mut_slice()).expect("w_ho update shapes");
            }
        }
        for row in self.d_h[..n * hd].chunks_exact(hd) {
            axpy(c_ih, row, &mut p.b_h);
        }
        for row in self.d_o[..n * o].chunks_exact(o) {
            axpy(c_ho, row, &mut p.b_o);
        }
    }
}

/// Class with the largest output after a free phase from zero; ties go to
/// the lowest index.
pub fn predict(x: &[f64], p: &NetworkParams, h: &EpHyperParams) -> Result<usize> {
    let r = free_phase(x, p, h, &NeuronState::for_params(p))?;
    Ok(argmax(&r.state.s_o).unwrap_or(0))
}

const CHUNK: usize = 256;

/// Relaxes every row of `set` from zero and hands
/// `(index, s_h, s_o, last step norm)` to `visit`, a chunk at a time.
pub fn relax_set(
    set: &LabeledSet,
    p: &NetworkParams,
    h: &EpHyperParams,
    mut visit: impl FnMut(usize, &[f64], &[f64], f64),
) -> Result<()> {
    if set.is_empty() {
        return Ok(());
    }
    check_dims("relax_set input", p.n_in(), set.dim())?;
    let (hd, o) = (p.n_hidden(), p.n_out());
    let mut batch = Batch::new(p, CHUNK);
    let mut norms = vec![0.0; CHUNK];
    for start in (0..set.len()).step_by(CHUNK) {
        let n = CHUNK.min(set.len() - start);
        let xs = &set.raw_inputs()[start * set.dim()..(start + n) * set.dim()];
        batch_drive(xs, n, p, &mut batch.drive[..n * hd]);
        batch.reset(n);
        batch.relax(n, p, h, h.free_steps, None, Some(&mut norms[..n]))?;
        for (b, &norm) in norms[..n].iter().enumerate() {
            visit(
                start + b,
                &batch.s_h[b * hd..(b + 1) * hd],
                &batch.s_o[b * o..(b + 1) * o],
                norm,
            );
        }
    }
    Ok(())
}

/// `drive[b] = W_ih x_b + b_h` for `n` row-major inputs.
fn batch_drive(xs: &[f64], n: usize, p: &NetworkParams, drive: &mut [f64]) {
    let hd = p.n_hidden();
    for row in drive.chunks_exact_mut(hd) {
        row.copy_from_slice(&p.b_h);
    }
    gemm(1.0, MatView::row_major(xs, n, p.n_in()), p.w_ih.view().t(), 1.0, drive).expect("drive shapes");
}

pub fn predict_set(set: &LabeledSet, p: &NetworkParams, h: &EpHyperParams) -> Result<Vec<usize>> {
    let mut preds = vec![0; set.len()];
    relax_set(set, p, h, |i, _, s_o, _| preds[i] = argmax(s_o).unwrap_or(0))?;
    Ok(preds)
}

/// Fraction of rows classified correctly; 0 for an empty set.
pub fn accuracy(set: &LabeledSet, p: &NetworkParams, h: &EpHyperParams) -> Result<f64> {
    if set.is_empty() {
        return Ok(0.0);
    }
    let preds = predict_set(set, p, h)?;
    let correct = preds.iter().zip(set.labels()).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / set.len() as f64)
}

/// Trains for `epochs_per_task` epochs over seeded-shuffled minibatches,
/// applying the batch-mean EP update after each minibatch.
pub fn train_task(train: &LabeledSet, p: &NetworkParams, h: &EpHyperParams, rng: &mut Rng) -> Result<NetworkParams> {
    train_epochs(train, p, h, h.epochs_per_task, rng)
}

pub fn train_epochs(
    train: &LabeledSet,
    p: &NetworkParams,
    h: &EpHyperParams,
    epochs: usize,
    rng: &mut Rng,
) -> Result<NetworkParams> {
    h.validate()?;
    p.check()?;
    let mut p = p.clone();
    if train.is_empty() || epochs == 0 {
        return Ok(p);
    }
    check_dims("train_task input", p.n_in(), train.dim())?;
    let (i, hd, o) = (p.n_in(), p.n_hidden(), p.n_out());
    if let Some(&bad) = train.labels().iter().find(|&&l| l >= o) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            num_classes: o,
        });
    }
    let bs = h.batch_size;
    let mut acc = Accumulator::new(&p, bs);
    let mut xs = vec![0.0; bs * i];
    let mut free = Batch::new(&p, bs);
    let mut clamped = Batch::new(&p, bs);
    let mut ys = vec![0.0; bs * o];

    for _ in 0..epochs {
        let order = rng.permutation(train.len());
        for batch in order.chunks(bs) {
            let n = batch.len();
            ys[..n * o].fill(0.0);
            for (b, &idx) in batch.iter().enumerate() {
                xs[b * i..(b + 1) * i].copy_from_slice(train.input(idx));
                ys[b * o + train.label(idx)] = 1.0;
            }
            batch_drive(&xs[..n * i], n, &p, &mut free.drive[..n * hd]);
            free.reset(n);
            free.relax(n, &p, h, h.free_steps, None, None)?;
            clamped.drive[..n * hd].copy_from_slice(&free.drive[..n * hd]);
            clamped.s_h[..n * hd].copy_from_slice(&free.s_h[..n * hd]);
            clamped.s_o[..n * o].copy_from_slice(&free.s_o[..n * o]);
            clamped.relax(n, &p, h, h.clamped_steps, Some((&ys[..n * o], h.beta)), None)?;
            for b in 0..n {
                acc.push_raw(
                    b,
                    &xs[b * i..(b + 1) * i],
                    &free.s_h[b * hd..(b + 1) * hd],
                    &free.s_o[b * o..(b + 1) * o],
                    &clamped.s_h[b * hd..(b + 1) * hd],
                    &clamped.s_o[b * o..(b + 1) * o],
                );
            }
            acc.apply(&mut p, h, n);
        }
    }
    Ok(p)
}

pub fn one_hot(class: usize, n: usize) -> Vector {
    let mut v = Vector::zeros(n);
    v[class] = 1.0;
    v
}
