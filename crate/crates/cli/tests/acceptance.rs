//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Desk-scale criteria read the runs produced by the shipped configs under
//! `configs/`. A run is reused when its `summary.json` carries the current
//! config hash; otherwise it is recomputed here, which takes hours on one
//! core. Set `SOMNUS_ACCEPTANCE_FRESH=1` to force recomputation.
//!
//! Failing criteria are reported, not raised: the binary exits non-zero
//! only when the harness itself breaks.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use somnus::analysis::{cosine_similarity, hidden_correlation, synaptic_importance, weight_diff_histogram};
use somnus::continual::{init_params, run_order, run_rng, split_rng, RunSpec, Strategy};
use somnus::data::{split_tasks, LabeledSet};
use somnus::ep_model::{
    clamped_phase, ep_weight_update, free_phase, one_hot, relax, EpHyperParams, LearningRule, NetworkParams,
    NeuronState,
};
use somnus::hyperopt::{ga_optimize, sphere, GaConfig};
use somnus::numerics::{Matrix, Rng, Vector};
use somnus::src_sleep::{poisson_input, sleep_observed, InputRates, SleepParams};
use somnus_cli::config::LoadedConfig;
use somnus_cli::run::{cmd_run, snapshot_name, SNAPSHOT_DIR};

type Outcome = Result<(bool, String), String>;

struct Harness {
    root: PathBuf,
    fresh: bool,
    runs: BTreeMap<String, Result<PathBuf, String>>,
    passed: usize,
    failed: usize,
}

impl Harness {
    fn report(&mut self, id: &str, name: &str, outcome: Outcome) {
        let (ok, detail) = match outcome {
            Ok(r) => r,
            Err(e) => (false, format!("not evaluated: {e}")),
        };
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
        println!("[{}] {id:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }

    fn config(&self, name: &str) -> PathBuf {
        self.root.join("configs").join(format!("{name}.toml"))
    }

    fn load(&self, name: &str) -> Result<LoadedConfig, String> {
        LoadedConfig::load(&self.config(name), false).map_err(|e| format!("{name}: {e}"))
    }

    /// Output directory of a complete run of `configs/<name>.toml`.
    fn run(&mut self, name: &str) -> Result<PathBuf, String> {
        if let Some(r) = self.runs.get(name) {
            return r.clone();
        }
        let r = self.load(name).and_then(|loaded| {
            let out = loaded.output_dir();
            if !self.fresh && cached_hash(&out).as_deref() == Some(loaded.hash.as_str()) {
                return Ok(out);
            }
            eprintln!("running {name} into {}", out.display());
            cmd_run(&self.config(name), false).map_err(|e| format!("{name}: {e}"))?;
            Ok(out)
        });
        self.runs.insert(name.to_string(), r.clone());
        r
    }
}

fn cached_hash(out: &Path) -> Option<String> {
    let text = fs::read_to_string(out.join("summary.json")).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    Some(v["config_hash"].as_str()?.to_string())
}

fn final_mean(out: &Path, strategy: &str) -> Result<f64, String> {
    let path = out.join(strategy).join("summary.json");
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    v["strategies"][0]["final_mean"]
        .as_f64()
        .ok_or_else(|| format!("{}: no final_mean", path.display()))
}

/// `(order, phase, task) → accuracy` from a strategy's metrics.csv.
fn metrics(out: &Path, strategy: &str) -> Result<Vec<(usize, String, usize, f64)>, String> {
    let path = out.join(strategy).join("metrics.csv");
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            let bad = || format!("bad metrics row {l:?}");
            Ok((
                c[0].parse().map_err(|_| bad())?,
                c[1].to_string(),
                c[2].parse().map_err(|_| bad())?,
                c[3].parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&x)
}

// ---------------------------------------------------------------------------
// Desk-scale runs

fn c1_sequential(h: &mut Harness) -> Outcome {
    let out = h.run("mnist")?;
    let fin = final_mean(&out, "sequential")?;
    let rows = metrics(&out, "sequential")?;
    let at_t5: Vec<_> = rows.iter().filter(|r| r.1 == "T5").collect();
    let last = mean(&at_t5.iter().filter(|r| r.2 == 5).map(|r| r.3).collect::<Vec<_>>());
    let earlier = mean(&at_t5.iter().filter(|r| r.2 < 5).map(|r| r.3).collect::<Vec<_>>());
    let ok = within(fin, 0.18, 0.32) && last > 0.90 && earlier < 0.10;
    Ok((
        ok,
        format!(
            "final {} (want 18–32%), last task {} (want > 90%), earlier tasks {} (want < 10%)",
            pct(fin),
            pct(last),
            pct(earlier)
        ),
    ))
}

fn c2_src(h: &mut Harness) -> Outcome {
    let seq = final_mean(&h.run("mnist")?, "sequential")?;
    let src = final_mean(&h.run("mnist_src")?, "src")?;
    let gain = src - seq;
    Ok((
        within(src, 0.55, 0.72) && gain >= 0.25,
        format!(
            "final {} (want 55–72%), gain over sequential {:.2} points (want ≥ 25)",
            pct(src),
            100.0 * gain
        ),
    ))
}

fn c3_src_rehearsal(h: &mut Harness) -> Outcome {
    let out = h.run("mnist_src")?;
    let (src, both) = (final_mean(&out, "src")?, final_mean(&out, "src_rehearsal")?);
    Ok((
        both >= src && within(both, 0.58, 0.75),
        format!("final {} (want 58–75% and ≥ SRC alone {})", pct(both), pct(src)),
    ))
}

fn c4_parallel(h: &mut Harness) -> Outcome {
    let out = h.run("mnist")?;
    let par = final_mean(&out, "parallel")?;
    Ok((par >= 0.95, format!("{} (want ≥ 95%)", pct(par))))
}

fn c5_sweep(h: &mut Harness) -> Outcome {
    let out = h.run("mnist_sweep")?;
    let path = out.join("rehearsal_sweep.csv");
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let points: Vec<[f64; 3]> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| {
            let v: Vec<f64> = l.split(',').filter_map(|c| c.parse().ok()).collect();
            [v[0], v[1], v[2]]
        })
        .collect();
    let low: Vec<_> = points.iter().filter(|p| p[0] <= 0.05).collect();
    let high: Vec<_> = points.iter().filter(|p| p[0] >= 0.20).collect();
    if low.is_empty() || high.is_empty() {
        return Err("sweep needs fractions both ≤ 5% and ≥ 20%".into());
    }
    let above = low.iter().all(|p| p[2] > p[1]);
    let close = high.iter().all(|p| (p[2] - p[1]).abs() < 0.05);
    let curve: Vec<String> = points
        .iter()
        .map(|p| format!("{}:{:.1}/{:.1}", p[0], 100.0 * p[1], 100.0 * p[2]))
        .collect();
    Ok((
        above && close,
        format!(
            "SRC above at ≤ 5%: {above}, gap < 5 points at ≥ 20%: {close} (fraction:without/with {})",
            curve.join(" ")
        ),
    ))
}

fn c6_dataset(h: &mut Harness, name: &str, seq_band: (f64, f64), src_band: (f64, f64)) -> Outcome {
    let src_name = format!("{name}_src");
    for config in [name, src_name.as_str()] {
        let path = h.config(config);
        let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let cfg: somnus_cli::config::ExperimentConfig = toml::from_str(&text).map_err(|e| e.to_string())?;
        let data = &cfg.data;
        for f in [&data.images, &data.labels, &data.features].into_iter().flatten() {
            let f = path.parent().unwrap_or(Path::new(".")).join(f);
            if !f.is_file() {
                return Err(format!("{} is absent", f.display()));
            }
        }
    }
    let seq = final_mean(&h.run(name)?, "sequential")?;
    let src = final_mean(&h.run(&src_name)?, "src")?;
    Ok((
        within(seq, seq_band.0, seq_band.1) && within(src, src_band.0, src_band.1),
        format!(
            "sequential {} (want {:.0}–{:.0}%), SRC {} (want {:.0}–{:.0}%)",
            pct(seq),
            100.0 * seq_band.0,
            100.0 * seq_band.1,
            pct(src),
            100.0 * src_band.0,
            100.0 * src_band.1
        ),
    ))
}

// ---------------------------------------------------------------------------
// Properties

fn flatten(p: &NetworkParams) -> Vec<f64> {
    [p.w_ih.as_slice(), p.w_ho.as_slice(), &p.b_h, &p.b_o].concat()
}

fn with_entry(p: &NetworkParams, idx: usize, delta: f64) -> NetworkParams {
    let mut q = p.clone();
    let (a, b, c) = (q.w_ih.as_slice().len(), q.w_ho.as_slice().len(), q.b_h.len());
    match idx {
        i if i < a => q.w_ih.as_mut_slice()[i] += delta,
        i if i < a + b => q.w_ho.as_mut_slice()[i - a] += delta,
        i if i < a + b + c => q.b_h[i - a - b] += delta,
        i => q.b_o[i - a - b - c] += delta,
    }
    q
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Contrastive EP updates against central differences of
/// `½‖s_o* − y‖²` taken through a full free relaxation.
fn c7_gradient_alignment() -> Outcome {
    const NETS: usize = 24;
    const EPS: f64 = 1e-5;
    let h = EpHyperParams {
        alpha_ih: 1.0,
        alpha_ho: 1.0,
        beta: 1e-3,
        free_steps: 5000,
        clamped_steps: 5000,
        rule: LearningRule::Contrastive,
        ..EpHyperParams::mnist()
    };
    let mut rng = Rng::seeded(2024);
    let mut cosines = Vec::with_capacity(NETS);
    let (mut pooled_ep, mut pooled_grad) = (Vec::new(), Vec::new());
    let mut tried = 0;
    // Saturated outputs give a zero gradient and no direction to compare.
    while cosines.len() < NETS && tried < 10 * NETS {
        tried += 1;
        let (n_in, n_h, n_o) = (6, 5, 3);
        let p = NetworkParams::glorot(n_in, n_h, n_o, &mut rng);
        let x: Vec<f64> = (0..n_in).map(|_| rng.uniform()).collect();
        let y = one_hot(rng.below(n_o), n_o);
        let zero = NeuronState::for_params(&p);
        let cost = |q: &NetworkParams| -> Result<f64, String> {
            let s = relax(&x, None, q, &h, &zero, h.free_steps)
                .map_err(|e| e.to_string())?
                .state;
            Ok(0.5 * s.s_o.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        };
        let free = free_phase(&x, &p, &h, &zero).map_err(|e| e.to_string())?;
        let clamped = clamped_phase(&x, &y, &p, &h, &free.state).map_err(|e| e.to_string())?;
        let updated = ep_weight_update(&free.state, &clamped.state, &x, &p, &h).map_err(|e| e.to_string())?;
        let ep: Vec<f64> = flatten(&updated).iter().zip(flatten(&p)).map(|(a, b)| a - b).collect();
        let mut neg_grad = Vec::with_capacity(ep.len());
        for i in 0..ep.len() {
            let g = (cost(&with_entry(&p, i, EPS))? - cost(&with_entry(&p, i, -EPS))?) / (2.0 * EPS);
            neg_grad.push(-g);
        }
        let c = cos(&ep, &neg_grad);
        if c.is_finite() {
            cosines.push(c);
            pooled_ep.extend(ep);
            pooled_grad.extend(neg_grad);
        }
    }
    if cosines.len() < 20 {
        return Ok((
            false,
            format!("only {} of {tried} networks had a non-zero gradient", cosines.len()),
        ));
    }
    let aggregate = cos(&pooled_ep, &pooled_grad);
    let m = mean(&cosines);
    Ok((
        aggregate > 0.7,
        format!(
            "aggregate cosine {aggregate:.4} over {} networks (want > 0.7); per-network mean {m:.4}; {} fully saturated networks skipped",
            cosines.len(),
            tried - cosines.len()
        ),
    ))
}

fn c8_beta_zero() -> Outcome {
    let mut rng = Rng::seeded(8);
    let mut cases = 0;
    for _ in 0..20 {
        let p = NetworkParams::glorot(12, 9, 4, &mut rng);
        let x: Vec<f64> = (0..12).map(|_| rng.uniform()).collect();
        let y = one_hot(rng.below(4), 4);
        let h = EpHyperParams {
            beta: 0.0,
            free_steps: 40,
            clamped_steps: 25,
            ..EpHyperParams::mnist()
        };
        let free = free_phase(&x, &p, &h, &NeuronState::for_params(&p)).map_err(|e| e.to_string())?;
        let clamped = clamped_phase(&x, &y, &p, &h, &free.state).map_err(|e| e.to_string())?;
        let more = relax(&x, None, &p, &h, &free.state, h.clamped_steps).map_err(|e| e.to_string())?;
        if clamped.state != more.state || clamped.step_norms != more.step_norms {
            return Ok((false, format!("case {cases}: clamped and free states differ")));
        }
        cases += 1;
    }
    Ok((
        true,
        format!("{cases} random networks, states and step norms bit-identical"),
    ))
}

fn c9_convergence(h: &mut Harness) -> Outcome {
    let out = h.run("mnist")?;
    let loaded = h.load("mnist")?;
    let snap = out.join("parallel").join(SNAPSHOT_DIR).join(snapshot_name(0, "P"));
    let p = NetworkParams::load(&snap).map_err(|e| format!("{}: {e}", snap.display()))?;
    let data = loaded.load_data().map_err(|e| e.to_string())?;
    let batch = data.subset(&(0..1000).collect::<Vec<_>>());
    let ep = &loaded.config.ep;
    let settled = |p: &NetworkParams| -> Result<usize, String> {
        let zero = NeuronState::for_params(p);
        let mut n = 0;
        for i in 0..batch.len() {
            if free_phase(batch.input(i), p, ep, &zero)
                .map_err(|e| e.to_string())?
                .last_step_norm()
                < 1e-3
            {
                n += 1;
            }
        }
        Ok(n)
    };
    let trained = settled(&p)?;
    // Reported alongside: an untrained network of the same shape.
    let glorot = NetworkParams::glorot(p.n_in(), p.n_hidden(), p.n_out(), &mut Rng::seeded(9));
    let untrained = settled(&glorot)?;
    Ok((
        trained as f64 / batch.len() as f64 >= 0.99,
        format!(
            "{trained}/1000 samples below 1e-3 after {} steps of the trained network (want ≥ 99%); untrained network {untrained}/1000",
            ep.free_steps
        ),
    ))
}

/// Per-step record of a sleep run: potentials before reset, spikes, and the
/// weights after that step's STDP.
#[derive(Debug, PartialEq)]
struct Trace {
    v_h: f64,
    v_o: f64,
    hidden: bool,
    output: bool,
    w_ih: Vec<f64>,
    w_ho: f64,
}

fn trace(p: &NetworkParams, rates: &[f64], sp: &SleepParams) -> Result<Vec<Trace>, String> {
    let rates = InputRates::new(Vector::from(rates)).map_err(|e| e.to_string())?;
    let mut steps = Vec::new();
    sleep_observed(p, &rates, sp, &mut Rng::seeded(1), |s| {
        steps.push(Trace {
            v_h: s.v_h[0],
            v_o: s.v_o[0],
            hidden: s.hidden[0],
            output: s.output[0],
            w_ih: (0..p.n_in()).map(|i| s.w_ih(0, i)).collect(),
            w_ho: s.w_ho(0, 0),
        })
    })
    .map_err(|e| e.to_string())?;
    Ok(steps)
}

fn close_trace(got: &[Trace], want: &[Trace]) -> bool {
    let near = |a: f64, b: f64| (a - b).abs() < 1e-12;
    got.len() == want.len()
        && got.iter().zip(want).all(|(g, w)| {
            near(g.v_h, w.v_h)
                && near(g.v_o, w.v_o)
                && g.hidden == w.hidden
                && g.output == w.output
                && g.w_ih.len() == w.w_ih.len()
                && g.w_ih.iter().zip(&w.w_ih).all(|(a, b)| near(*a, *b))
                && near(g.w_ho, w.w_ho)
        })
}

fn tiny_net(w_ih: &[f64], w_ho: f64) -> Result<NetworkParams, String> {
    Ok(NetworkParams {
        w_ih: Matrix::from_vec(1, w_ih.len(), w_ih.to_vec()).map_err(|e| e.to_string())?,
        w_ho: Matrix::from_vec(1, 1, vec![w_ho]).map_err(|e| e.to_string())?,
        b_h: Vector::zeros(1),
        b_o: Vector::zeros(1),
    })
}

fn t(v_h: f64, v_o: f64, hidden: bool, output: bool, w_ih: &[f64], w_ho: f64) -> Trace {
    Trace {
        v_h,
        v_o,
        hidden,
        output,
        w_ih: w_ih.to_vec(),
        w_ho,
    }
}

/// Hand-traced runs over three steps. Input spikes are deterministic
/// because the rates are 0 or 1.
fn c10_sleep_trace() -> Outcome {
    let sp = SleepParams {
        scale_ih: 1.0,
        scale_ho: 1.0,
        threshold_h: 0.5,
        threshold_o: 0.5,
        inc: 0.01,
        dec: 0.02,
        duration: 3,
        feedback: true,
    };

    // One input→hidden connection above threshold, silent output. The hidden
    // unit fires every step; STDP is skipped at t = 1, so w grows by inc at
    // t = 2 and t = 3.
    let single = trace(&tiny_net(&[0.6], 0.0)?, &[1.0], &sp)?;
    let single_want = [
        t(0.6, 0.0, true, false, &[0.6], 0.0),
        t(0.6, 0.0, true, false, &[0.61], 0.0),
        t(0.61, 0.0, true, false, &[0.62], 0.0),
    ];

    // Two inputs (rates 1 and 0), one hidden and one output unit.
    // t=1: v_o = 0; v_h = 0.6 → h fires.
    // t=2: v_o = 0.7 → o fires, w_ho += inc; v_h = 0.6 → h fires,
    //      w_ih = [0.61, 0.08].
    // t=3: v_o = 0.71 → o fires, w_ho = 0.72; v_h = 0.61 + 0.72 feedback
    //      = 1.33 → h fires, w_ih = [0.62, 0.06].
    let pair = trace(&tiny_net(&[0.6, 0.1], 0.7)?, &[1.0, 0.0], &sp)?;
    let pair_want = [
        t(0.6, 0.0, true, false, &[0.6, 0.1], 0.7),
        t(0.6, 0.7, true, true, &[0.61, 0.08], 0.71),
        t(1.33, 0.71, true, true, &[0.62, 0.06], 0.72),
    ];

    let ok1 = close_trace(&single, &single_want);
    let ok2 = close_trace(&pair, &pair_want);
    let detail = if ok1 && ok2 {
        "single-connection and two-layer traces match at every step".to_string()
    } else {
        format!("single ok {ok1}, two-layer ok {ok2}; got {single:?} / {pair:?}")
    };
    Ok((ok1 && ok2, detail))
}

fn c11_poisson() -> Outcome {
    const DRAWS: usize = 10_000;
    let targets = [0.0, 0.3, 1.0];
    let rates = InputRates::new(Vector::from(&targets[..])).map_err(|e| e.to_string())?;
    let mut rng = Rng::seeded(11);
    let mut counts = [0usize; 3];
    for _ in 0..DRAWS {
        for (c, s) in counts.iter_mut().zip(poisson_input(&rates, &mut rng)) {
            *c += usize::from(s);
        }
    }
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / DRAWS as f64).collect();
    let ok = freq.iter().zip(&targets).all(|(f, r)| (f - r).abs() <= 0.02);
    Ok((
        ok,
        format!("empirical {freq:?} for targets {targets:?} over {DRAWS} draws (±0.02)"),
    ))
}

fn c12_weight_shift(h: &mut Harness) -> Outcome {
    let out = h.run("mnist_src")?;
    let snaps = out.join("src").join(SNAPSHOT_DIR);
    let orders = h.load("mnist_src")?.config.experiment.orders;
    let (mut direct, mut library, mut n) = (0.0, 0.0, 0usize);
    let mut negative = 0;
    for o in 0..orders {
        let load = |l: &str| NetworkParams::load(snaps.join(snapshot_name(o, l))).map_err(|e| e.to_string());
        let (before, after) = (load("T5")?, load("S5")?);
        let d: f64 = after
            .w_ih
            .as_slice()
            .iter()
            .zip(before.w_ih.as_slice())
            .map(|(a, b)| a - b)
            .sum();
        let len = before.w_ih.as_slice().len();
        let lib = weight_diff_histogram(&before, &after, 50)
            .map_err(|e| e.to_string())?
            .w_ih
            .mean;
        direct += d;
        library += lib * len as f64;
        n += len;
        negative += usize::from(d < 0.0);
    }
    let (direct, library) = (direct / n as f64, library / n as f64);
    let agree = (direct - library).abs() <= 1e-9 * direct.abs().max(1e-12);
    Ok((
        direct < 0.0 && library < 0.0 && agree,
        format!(
            "mean w_ih change T5→S5 {direct:.4e} (direct) / {library:.4e} (histogram), negative in {negative}/{orders} orders"
        ),
    ))
}

fn c13_correlation(h: &mut Harness) -> Outcome {
    let out = h.run("mnist_src")?;
    let loaded = h.load("mnist_src")?;
    let data = loaded.load_data().map_err(|e| e.to_string())?;
    let plan = loaded.plan(Strategy::Src, 5);
    let seq = split_tasks(
        &data,
        plan.labels_per_task,
        &plan.task_orders[0],
        &mut split_rng(plan.seed),
    )
    .map_err(|e| e.to_string())?;
    let test = seq.all_test().map_err(|e| e.to_string())?;
    let snaps = out.join("src").join(SNAPSHOT_DIR);
    let score = |l: &str| -> Result<f64, String> {
        let p = NetworkParams::load(snaps.join(snapshot_name(0, l))).map_err(|e| e.to_string())?;
        Ok(hidden_correlation(&p, &loaded.config.ep, &test)
            .map_err(|e| e.to_string())?
            .mean_abs_off_diagonal())
    };
    let (pre, post) = (score("T5")?, score("S5")?);
    Ok((
        post < pre,
        format!("mean |off-diagonal| {pre:.4} at T5 → {post:.4} at S5 (order 0)"),
    ))
}

/// Classes 0–3 in two tasks, ten outputs, SRC after each task.
fn c14_importance(h: &mut Harness) -> Outcome {
    let loaded = h.load("mnist_src")?;
    let data = loaded.load_data().map_err(|e| e.to_string())?;
    let plan = loaded.plan(Strategy::Src, 5);
    let mut seq = split_tasks(&data, 2, &[0, 1, 2, 3, 4], &mut split_rng(plan.seed)).map_err(|e| e.to_string())?;
    seq.tasks.truncate(2);
    seq.order.truncate(2);
    let eval: Vec<LabeledSet> = seq.tasks.iter().map(|t| t.test.clone()).collect();
    let spec = RunSpec::from(&plan);
    let init = init_params(data.dim(), plan.hidden, data.num_classes(), plan.seed, 0);
    let mut nets = BTreeMap::new();
    run_order(&spec, &seq, &eval, &init, &run_rng(plan.seed, 0), None, 0, &mut |ev| {
        nets.insert(ev.label.to_string(), ev.params.clone());
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    let test = seq.all_test().map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (task, t) in seq.tasks.iter().enumerate() {
        for &c in &t.labels {
            let samples = test.filter_classes(&[c]);
            let u = |l: &str| -> Result<Vec<f64>, String> {
                Ok(synaptic_importance(&nets[l], &loaded.config.ep, &samples, c)
                    .map_err(|e| e.to_string())?
                    .into_inner())
            };
            let (t1, t2, s2) = (u("T1")?, u("T2")?, u("S2")?);
            let cs = |a: &[f64], b: &[f64]| cosine_similarity(a, b).unwrap_or(f64::NAN);
            let base = cs(&t1, &t2);
            let after = if task == 0 { cs(&t1, &s2) } else { cs(&t2, &s2) };
            ok &= after > base;
            let pair = if task == 0 { "T1,S2" } else { "T2,S2" };
            parts.push(format!("class {c}: cos(T1,T2) {base:.3} → cos({pair}) {after:.3}"));
        }
    }
    Ok((ok, parts.join("; ")))
}

fn c15_ga() -> Outcome {
    let cfg = GaConfig::with_bounds(vec![[-5.0, 5.0]; 7]);
    let ga = ga_optimize(sphere, &cfg, &mut Rng::seeded(15)).map_err(|e| e.to_string())?;
    let norm = ga.best.genome.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mono = ga
        .history
        .windows(2)
        .all(|w| w[1].best >= w[0].best && w[1].best_ever >= w[0].best_ever);
    let fitness_matches = (ga.best.fitness.unwrap_or(f64::NAN) + norm * norm).abs() < 1e-9;
    Ok((
        norm < 0.5 && mono && fitness_matches,
        format!(
            "best norm {norm:.4} (want < 0.5) after {} generations, monotone best: {mono}",
            ga.history.len()
        ),
    ))
}

/// Fast-tier sequential run, twice, from the MNIST config.
fn c16_determinism(h: &mut Harness) -> Outcome {
    let loaded = h.load("mnist")?;
    let mut cfg = loaded.effective();
    cfg.experiment.strategies = vec![Strategy::Sequential];
    cfg.experiment.orders = 1;
    cfg.experiment.task_orders = None;
    cfg.experiment.rehearsal_sweep = None;
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    // Same config file and output directory both times, so the hash header matches too.
    cfg.experiment.output_dir = dir.path().join("run");
    let path = dir.path().join("run.toml");
    fs::write(&path, somnus_cli::config::to_toml(&cfg)).map_err(|e| e.to_string())?;
    let metrics = cfg.experiment.output_dir.join("sequential").join("metrics.csv");
    let mut texts = Vec::new();
    for _ in 0..2 {
        if cfg.experiment.output_dir.exists() {
            fs::remove_dir_all(&cfg.experiment.output_dir).map_err(|e| e.to_string())?;
        }
        cmd_run(&path, true).map_err(|e| e.to_string())?;
        texts.push(fs::read_to_string(&metrics).map_err(|e| e.to_string())?);
    }
    let body = |s: &str| s.lines().skip(1).collect::<Vec<_>>().join("\n");
    Ok((
        texts[0] == texts[1] && !body(&texts[0]).is_empty(),
        format!(
            "fast-tier metrics.csv identical across two runs: {}",
            texts[0] == texts[1]
        ),
    ))
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .expect("workspace root");
    std::env::set_var("SOMNUS_OUTPUT_ROOT", &root);
    let mut h = Harness {
        root,
        fresh: std::env::var("SOMNUS_ACCEPTANCE_FRESH").is_ok_and(|v| v == "1"),
        runs: BTreeMap::new(),
        passed: 0,
        failed: 0,
    };

    let r = c1_sequential(&mut h);
    h.report("1", "sequential MNIST", r);
    let r = c2_src(&mut h);
    h.report("2", "SRC MNIST", r);
    let r = c3_src_rehearsal(&mut h);
    h.report("3", "SRC + 2% rehearsal MNIST", r);
    let r = c4_parallel(&mut h);
    h.report("4", "parallel MNIST", r);
    let r = c5_sweep(&mut h);
    h.report("5", "rehearsal sweep", r);
    let r = c6_dataset(&mut h, "fmnist", (0.16, 0.27), (0.38, 0.53));
    h.report("6", "FMNIST", r);
    let r = c6_dataset(&mut h, "kmnist", (0.16, 0.25), (0.40, 0.56));
    h.report("6", "KMNIST", r);
    h.report("7", "EP gradient alignment", c7_gradient_alignment());
    h.report("8", "β = 0 clamped phase", c8_beta_zero());
    let r = c9_convergence(&mut h);
    h.report("9", "free-phase convergence", r);
    h.report("10", "sleep micro-oracle", c10_sleep_trace());
    h.report("11", "Poisson generator", c11_poisson());
    let r = c12_weight_shift(&mut h);
    h.report("12", "post-SRC weight shift", r);
    let r = c13_correlation(&mut h);
    h.report("13", "hidden correlation", r);
    let r = c14_importance(&mut h);
    h.report("14", "two-task synaptic importance", r);
    h.report("15", "GA sphere", c15_ga());
    let r = c16_determinism(&mut h);
    h.report("16", "determinism", r);

    println!("\nacceptance: {} passed, {} failed", h.passed, h.failed);
}
