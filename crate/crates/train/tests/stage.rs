mod common;

use common::{dataset, scratch, tiny};
use sourcenet_nn::checkpoint::Checkpoint;
use sourcenet_train::{run_stage, Init, TrainConfig, TrainError};

fn quick() -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        batch: 8,
        max_epochs: Some(3),
        patience: 10,
        seed: 5,
        ..TrainConfig::pretrain()
    }
}

#[test]
fn frozen_weights_stop_after_patience() {
    // An lr this small leaves every f32 weight unchanged, so validation loss
    // never improves after the first epoch.
    let recs = dataset(1, 40);
    let cfg = TrainConfig {
        lr: 1e-300,
        weight_decay: 0.0,
        patience: 1,
        max_epochs: Some(20),
        ..quick()
    };
    let out = run_stage(&recs, &cfg, Init::Fresh(tiny()), None).unwrap();
    assert_eq!(out.history.len(), 2);
    assert_eq!(out.history[0].val_loss, out.history[1].val_loss);
}

#[test]
fn seeded_runs_repeat_and_seeds_differ() {
    let recs = dataset(2, 40);
    let a = run_stage(&recs, &quick(), Init::Fresh(tiny()), None).unwrap();
    let b = run_stage(&recs, &quick(), Init::Fresh(tiny()), None).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.best.encode().unwrap(), b.best.encode().unwrap());
    let c = run_stage(&recs, &TrainConfig { seed: 6, ..quick() }, Init::Fresh(tiny()), None).unwrap();
    assert_ne!(a.history, c.history);
    let n = recs.len();
    assert_eq!(a.split.train.len() + a.split.val.len() + a.split.test.len(), n);
}

#[test]
fn resume_reproduces_an_uninterrupted_run() {
    let recs = dataset(3, 40);
    let full_dir = scratch("full");
    let full = run_stage(&recs, &quick(), Init::Fresh(tiny()), Some(&full_dir)).unwrap();
    let part_dir = scratch("part");
    let first = TrainConfig {
        max_epochs: Some(1),
        ..quick()
    };
    run_stage(&recs, &first, Init::Fresh(tiny()), Some(&part_dir)).unwrap();
    let last = Checkpoint::load(&part_dir.join("last.snck")).unwrap();
    let resumed = run_stage(&recs, &quick(), Init::Resume(last), Some(&part_dir)).unwrap();
    assert_eq!(resumed.history, full.history);
    assert_eq!(resumed.best.encode().unwrap(), full.best.encode().unwrap());
    assert_eq!(
        std::fs::read(full_dir.join("history.csv")).unwrap(),
        std::fs::read(part_dir.join("history.csv")).unwrap()
    );

    let other = TrainConfig { lr: 1e-2, ..quick() };
    let last = Checkpoint::load(&part_dir.join("last.snck")).unwrap();
    assert!(matches!(
        run_stage(&recs, &other, Init::Resume(last), None),
        Err(TrainError::Config(_))
    ));
    let _ = std::fs::remove_dir_all(full_dir);
    let _ = std::fs::remove_dir_all(part_dir);
}

#[test]
fn finetune_starts_from_the_checkpoint() {
    let recs = dataset(4, 40);
    let pre = run_stage(&recs, &quick(), Init::Fresh(tiny()), None).unwrap();
    let cfg = TrainConfig {
        max_epochs: Some(1),
        batch: 8,
        ..TrainConfig::finetune()
    };
    let ft = run_stage(&recs, &cfg, Init::From(pre.best.clone()), None).unwrap();
    assert_eq!(ft.history.len(), 1);
    assert_eq!(ft.best.model, pre.best.model);
}

#[test]
fn nan_input_is_reported_with_its_batch() {
    let mut recs = dataset(5, 40);
    for r in &mut recs {
        r.stations[0].scalars[1] = f32::NAN;
    }
    match run_stage(&recs, &quick(), Init::Fresh(tiny()), None) {
        Err(TrainError::NonFinite { epoch, batch, events }) => {
            assert_eq!((epoch, batch), (1, 0));
            assert_eq!(events.len(), 8);
        }
        other => panic!("expected NonFinite, got {other:?}"),
    }
}

#[test]
fn bad_configs_and_empty_splits() {
    let recs = dataset(6, 2);
    assert!(matches!(
        run_stage(&recs, &quick(), Init::Fresh(tiny()), None),
        Err(TrainError::EmptySplit(_))
    ));
    assert!(matches!(
        run_stage(&[], &quick(), Init::Fresh(tiny()), None),
        Err(TrainError::EmptySplit(_))
    ));
    let bad = TrainConfig {
        split: [0.5, 0.1, 0.1],
        ..quick()
    };
    assert!(matches!(
        run_stage(&dataset(7, 20), &bad, Init::Fresh(tiny()), None),
        Err(TrainError::Config(_))
    ));
}
