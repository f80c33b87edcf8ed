use std::fs;
use std::path::Path;

use somnus::continual::{run_sequence, ExperimentPlan, Strategy};
use somnus::data::{load_idx, split_tasks};
use somnus::ep_model::{accuracy, energy, free_phase, EpHyperParams, NetworkParams, NeuronState};
use somnus::numerics::Rng;
use somnus::src_sleep::{src_phase, InputRates, SleepParams};

const SIDE: usize = 5;
const PER_CLASS: usize = 30;

/// Ten classes, each lighting a distinct pair of pixels over a noisy floor.
fn write_idx(dir: &Path) {
    let n = 10 * PER_CLASS;
    let mut images = vec![0, 0, 8, 3];
    for d in [n, SIDE, SIDE] {
        images.extend_from_slice(&(d as u32).to_be_bytes());
    }
    let mut labels = vec![0, 0, 8, 1];
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    let mut rng = Rng::seeded(99);
    for i in 0..n {
        let c = i % 10;
        labels.push(c as u8);
        for px in 0..SIDE * SIDE {
            let noise = (rng.uniform() * 30.0) as u8;
            images.push(if px / 2 == c { 225 + noise } else { noise });
        }
    }
    fs::write(dir.join("images"), images).unwrap();
    fs::write(dir.join("labels"), labels).unwrap();
}

fn ep() -> EpHyperParams {
    EpHyperParams {
        alpha_ih: 0.1,
        alpha_ho: 0.05,
        free_steps: 40,
        clamped_steps: 8,
        batch_size: 10,
        epochs_per_task: 4,
        ..EpHyperParams::mnist()
    }
}

fn plan(strategy: Strategy) -> ExperimentPlan {
    ExperimentPlan {
        strategy,
        task_orders: vec![vec![0, 1, 2, 3, 4], vec![4, 3, 2, 1, 0]],
        ep: ep(),
        sleep: Some(SleepParams {
            scale_ih: 1.0,
            scale_ho: 1.0,
            threshold_h: 1.0,
            threshold_o: 1.0,
            inc: 0.001,
            dec: 0.0008,
            duration: 100,
            feedback: true,
        }),
        rehearsal_fraction: 0.1,
        labels_per_task: 2,
        hidden: 24,
        seed: 5,
    }
}

#[test]
fn idx_file_to_class_incremental_metrics() {
    let dir = tempfile::tempdir().unwrap();
    write_idx(dir.path());
    let data = load_idx(dir.path().join("images"), dir.path().join("labels")).unwrap();
    assert_eq!(
        (data.len(), data.dim(), data.num_classes()),
        (10 * PER_CLASS, SIDE * SIDE, 10)
    );
    assert!(data.raw_inputs().iter().all(|&v| (0.0..=1.0).contains(&v)));

    let seq = run_sequence(&plan(Strategy::Sequential), &data, &mut |_| Ok(())).unwrap();
    let par = run_sequence(&plan(Strategy::Parallel), &data, &mut |_| Ok(())).unwrap();
    assert_eq!(seq.runs.len(), 2);
    // Only the last task survives sequential training; joint training keeps all.
    for run in &seq.runs {
        let last = run.phases.last().unwrap();
        assert_eq!(last.label, "T5");
        assert!(last.task_accuracy[4] > 0.8, "{:?}", last.task_accuracy);
    }
    assert!(
        par.final_mean() > seq.final_mean() + 0.3,
        "{} vs {}",
        par.final_mean(),
        seq.final_mean()
    );
}

#[test]
fn sleep_strategies_record_sleep_phases_and_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    write_idx(dir.path());
    let data = load_idx(dir.path().join("images"), dir.path().join("labels")).unwrap();
    let mut labels = Vec::new();
    let a = run_sequence(&plan(Strategy::SrcRehearsal), &data, &mut |ev| {
        labels.push(format!("{}{}", ev.order_id, ev.label));
        Ok(())
    })
    .unwrap();
    assert_eq!(labels.len(), 2 * 10);
    assert_eq!(&labels[..4], ["0T1", "0S1", "0T2", "0S2"]);
    let b = run_sequence(&plan(Strategy::SrcRehearsal), &data, &mut |_| Ok(())).unwrap();
    assert_eq!(a.final_scores(), b.final_scores());
}

#[test]
fn snapshot_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    write_idx(dir.path());
    let data = load_idx(dir.path().join("images"), dir.path().join("labels")).unwrap();
    let seq = split_tasks(&data, 2, &[0, 1, 2, 3, 4], &mut Rng::seeded(1)).unwrap();
    let p = NetworkParams::glorot(data.dim(), 16, 10, &mut Rng::seeded(2));
    let path = dir.path().join("net.bin");
    p.save(&path).unwrap();
    let q = NetworkParams::load(&path).unwrap();
    assert_eq!(p, q);
    let test = seq.all_test().unwrap();
    assert_eq!(accuracy(&test, &p, &ep()).unwrap(), accuracy(&test, &q, &ep()).unwrap());
}

#[test]
fn free_phase_lowers_energy_and_sleep_keeps_biases() {
    let mut rng = Rng::seeded(3);
    let p = NetworkParams::glorot(SIDE * SIDE, 16, 10, &mut rng);
    let x: Vec<f64> = (0..SIDE * SIDE).map(|_| rng.uniform()).collect();
    let zero = NeuronState::for_params(&p);
    let r = free_phase(&x, &p, &ep(), &zero).unwrap();
    assert!(energy(&r.state, &x, &p).unwrap() <= energy(&zero, &x, &p).unwrap());

    let rates = InputRates::new(x.into()).unwrap();
    let out = src_phase(&p, &rates, plan(Strategy::Src).sleep.as_ref().unwrap(), &mut rng).unwrap();
    assert_eq!(out.before, p);
    assert_eq!((&out.after.b_h, &out.after.b_o), (&p.b_h, &p.b_o));
}
