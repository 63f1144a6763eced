mod common;

use loadbench::data::{SplitKind, WindowSpec};
use loadbench::metrics::MetricSpace;
use loadbench::models::{build, Arch, ModelConfig};
use loadbench::trainer::{evaluate, grid_search, score, targets, train, TrainConfig};
use loadbench::Error;
use ndarray::Array2;

fn quick(max_epochs: usize, lr_grid: Vec<f64>) -> TrainConfig {
    TrainConfig { max_epochs, batch_size: 128, patience: 3, lr_grid, seed: 4, ..Default::default() }
}

#[test]
fn training_is_deterministic() {
    let data = common::prepared(16, 4, 4, 96 * 10, 2);
    let (tr, va) = (data.window_set(SplitKind::Train).unwrap(), data.window_set(SplitKind::Val).unwrap());
    let run = || {
        let mut m = build(&ModelConfig::toy(Arch::Lstm), data.window, 9).unwrap();
        let out = train(&mut m, &tr, &va, &quick(3, vec![1e-3]), 1e-3).unwrap();
        (out.log.without_timing(), m.params)
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    for ((_, x), (_, y)) in pa.iter().zip(pb.iter()) {
        assert_eq!(x.value, y.value);
    }
    assert_eq!(a.epochs.len(), a.termination_epoch);
}

#[test]
fn an_epoch_visits_every_training_window_once() {
    let data = common::prepared(16, 4, 3, 96 * 8, 1);
    let (tr, va) = (data.window_set(SplitKind::Train).unwrap(), data.window_set(SplitKind::Val).unwrap());
    let mut m = build(&ModelConfig::toy(Arch::Lstnet), data.window, 0).unwrap();
    let cfg = TrainConfig { batch_size: 100, ..quick(1, vec![1e-3]) };
    let out = train(&mut m, &tr, &va, &cfg, 1e-3).unwrap();
    let steps = tr.len().div_ceil(100);
    assert_eq!(out.log.epochs[0].steps, steps);
    assert_eq!(out.log.step_losses.len(), steps);
    assert!(out.log.epochs[0].train_loss.is_finite());
}

#[test]
fn best_epoch_parameters_are_restored() {
    let data = common::prepared(16, 4, 3, 96 * 8, 3);
    let (tr, va) = (data.window_set(SplitKind::Train).unwrap(), data.window_set(SplitKind::Val).unwrap());
    let mut m = build(&ModelConfig::toy(Arch::Lstm), data.window, 1).unwrap();
    let out = train(&mut m, &tr, &va, &quick(4, vec![3e-3]), 3e-3).unwrap();
    let val = evaluate(&m, &va, MetricSpace::Normalized, 128, Default::default()).unwrap().nmse;
    assert_eq!(val, out.log.best_val_nmse);
    let best = out.log.epochs.iter().map(|e| e.val_nmse).fold(f64::INFINITY, f64::min);
    assert_eq!(best, out.log.best_val_nmse);
}

#[test]
fn divergence_keeps_the_last_finite_state() {
    let data = common::prepared(16, 4, 3, 96 * 8, 1);
    let (tr, va) = (data.window_set(SplitKind::Train).unwrap(), data.window_set(SplitKind::Val).unwrap());
    let mut m = build(&ModelConfig::toy(Arch::Transformer), data.window, 0).unwrap();
    let err = train(&mut m, &tr, &va, &quick(3, vec![1e200]), 1e200).unwrap_err();
    let Error::Divergence { step, last_finite, .. } = err else { panic!("expected divergence, got {err}") };
    assert_eq!(last_finite.log.step_losses.len(), step);
    assert!(last_finite.log.step_losses.iter().all(|l| l.is_finite()));
    assert!(last_finite.params.iter().all(|(_, p)| p.value.iter().all(|v| v.is_finite())));
}

#[test]
fn grid_search_selects_and_reports() {
    let data = common::prepared(16, 4, 3, 96 * 8, 1);
    let (tr, va) = (data.window_set(SplitKind::Train).unwrap(), data.window_set(SplitKind::Val).unwrap());
    let toy = ModelConfig::toy(Arch::Lstm);

    let single = grid_search(&toy, 0, &tr, &va, &quick(1, vec![1e-3])).unwrap();
    assert_eq!(single.best_lr, 1e-3);
    assert!(single.rows[0].selected);

    // Steps this small leave the parameters untouched, so both candidates tie.
    let tie = grid_search(&toy, 0, &tr, &va, &quick(1, vec![1e-300, 1e-301])).unwrap();
    assert_eq!(tie.rows[0].val_nmse, tie.rows[1].val_nmse);
    assert_eq!(tie.best_lr, 1e-300);

    let mixed = grid_search(&toy, 0, &tr, &va, &quick(2, vec![1e200, 1e-3])).unwrap();
    assert_eq!(mixed.rows[0].val_nmse, None);
    assert_eq!(mixed.best_lr, 1e-3);
    assert!(mixed.to_csv().contains("diverged"));

    let all = grid_search(&toy, 0, &tr, &va, &quick(2, vec![1e250, 1e200]));
    assert!(matches!(all, Err(Error::AllDiverged)));
}

#[test]
fn scores_of_reference_predictors() {
    let data = common::prepared(16, 4, 6, 96 * 20, 5);
    let set = data.window_set(SplitKind::Train).unwrap();
    let truth = targets(&set);
    let perfect = score(&truth, &set, MetricSpace::Normalized).unwrap();
    assert_eq!((perfect.nmse, perfect.nmae), (0.0, 0.0));
    let physical = score(&truth, &set, MetricSpace::Physical).unwrap();
    assert!(physical.nmse < 1e-20);

    // Training loads are standardized globally, so predicting zero scores
    // close to one on the training windows.
    let zero = score(&Array2::zeros(truth.raw_dim()), &set, MetricSpace::Normalized).unwrap();
    assert!((zero.nmse - 1.0).abs() < 0.05, "{}", zero.nmse);
}

#[test]
fn mismatched_windows_are_rejected() {
    let data = common::prepared(16, 4, 3, 96 * 8, 1);
    let (tr, va) = (data.window_set(SplitKind::Train).unwrap(), data.window_set(SplitKind::Val).unwrap());
    let mut m = build(&ModelConfig::toy(Arch::Lstm), WindowSpec::new(8, 4).unwrap(), 0).unwrap();
    assert!(matches!(train(&mut m, &tr, &va, &quick(1, vec![1e-3]), 1e-3), Err(Error::SchemaMismatch(_))));
}
