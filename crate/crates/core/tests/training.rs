//! End-to-end training behaviour on small budgets.

use inalu::trainer::{train, train_with_observer};
use inalu::{CellVariant, DistributionSpec, ModelSpec, Operation, TaskKind, TaskSpec, TrainConfig};

const U3: DistributionSpec = DistributionSpec::Uniform { low: -3.0, high: 3.0 };
const U5: DistributionSpec = DistributionSpec::Uniform { low: -5.0, high: 5.0 };

fn minimal(op: Operation, seed: u64, n: usize) -> TaskSpec {
    TaskSpec::new(op, TaskKind::Minimal, seed, U3, vec![U5]).with_sample_count(n)
}

fn small_cfg(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, ..TrainConfig::default() }
}

#[test]
fn median_loss_drops_on_minimal_add() {
    let model = ModelSpec::single(CellVariant::InaluIndependentWeights, 2, 1);
    let mut ratios: Vec<f64> = (0..10)
        .map(|seed| {
            let r = train(&model, &minimal(Operation::Add, seed, 6400), &small_cfg(20), seed).unwrap().report;
            r.final_train_loss / r.initial_train_loss
        })
        .collect();
    ratios.sort_by(f64::total_cmp);
    assert!(ratios[5] < 0.5, "{ratios:?}");
}

#[test]
fn penalty_pushes_raw_weights_away_from_zero() {
    // Fraction of raw entries with |w| < 1 when the penalty switches on and five epochs later.
    let model = ModelSpec::single(CellVariant::InaluIndependentWeights, 2, 1);
    let mut before = 0.0;
    let mut after = 0.0;
    let mut seeds = 0;
    for seed in 0..5 {
        let mut first: Option<(usize, f64)> = None;
        let mut later = None;
        let mut observe = |p: &inalu::trainer::Progress| {
            let vals: Vec<f64> = p.network.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
            let small = vals.iter().filter(|w| w.abs() < 1.0).count() as f64 / vals.len() as f64;
            match first {
                None if p.reg_active => first = Some((p.epoch, small)),
                Some((e, _)) if p.epoch == e + 5 => later = Some(small),
                _ => {}
            }
        };
        train_with_observer(&model, &minimal(Operation::Add, seed, 6400), &small_cfg(40), seed, &mut observe).unwrap();
        if let (Some((_, b)), Some(a)) = (first, later) {
            assert!(a <= b, "seed {seed}: {b} -> {a}");
            before += b;
            after += a;
            seeds += 1;
        }
    }
    assert!(seeds >= 3, "penalty activated in only {seeds} runs");
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn identical_inputs_give_identical_reports() {
    let model = ModelSpec::single(CellVariant::NaluMatrixGate, 2, 1);
    let task = minimal(Operation::Mul, 3, 640);
    let a = train(&model, &task, &small_cfg(5), 3).unwrap();
    let b = train(&model, &task, &small_cfg(5), 3).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.network, b.network);
    let c = train(&model, &minimal(Operation::Mul, 4, 640), &small_cfg(5), 4).unwrap();
    assert_ne!(a.report, c.report);
}

#[test]
fn reinitializations_respect_the_cap() {
    // An unreachable target keeps the loss high, so every checkpoint is a candidate.
    let task = TaskSpec::new(
        Operation::Div,
        TaskKind::Minimal,
        1,
        DistributionSpec::Uniform { low: 0.001, high: 0.01 },
        vec![U5],
    )
    .with_sample_count(128);
    let cfg = TrainConfig { epochs: 60, reinit_check_every_epochs: 2, max_reinits: 3, ..TrainConfig::default() };
    let model = ModelSpec::single(CellVariant::NaluVectorGate, 2, 1);
    let mut counts = Vec::new();
    let r = train_with_observer(&model, &task, &cfg, 1, &mut |p| counts.push(p.reinit_count)).unwrap().report;
    assert!(r.reinit_count <= 3);
    assert!(counts.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(r.epochs_run, 60);
}

#[test]
fn mismatched_model_is_rejected() {
    let model = ModelSpec::single(CellVariant::InaluSharedWeights, 3, 1);
    assert!(train(&model, &minimal(Operation::Add, 0, 64), &small_cfg(1), 0).is_err());
}
