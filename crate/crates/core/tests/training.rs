use hgtdp::checkpoint::Checkpoint;
use hgtdp::config::TrainConfig;
use hgtdp::data::Split;
use hgtdp::fixtures;
use hgtdp::train::{evaluate, prepare, train_epochs, TrainOptions, TrainState};

fn quick(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        seed,
        epochs,
        batch_size: 8,
        lr: 2e-3,
        eval_every: 1,
        ..TrainConfig::default()
    }
}

fn dataset() -> hgtdp::data::DtaDataset {
    fixtures::synthetic(8, 4, &[1, 6, 19, 30], 3)
}

#[test]
fn same_seed_gives_identical_checkpoint_bytes() {
    let ds = dataset();
    let cfg = quick(4, 3);
    let run = || {
        let prepared = prepare(&ds, &cfg).unwrap();
        let mut state = TrainState::new(&cfg, &prepared).unwrap();
        let logs = train_epochs(&mut state, &prepared, &cfg, TrainOptions::default(), &mut |_| {}).unwrap();
        let lines: Vec<String> = logs.iter().map(|l| l.to_line()).collect();
        (state.checkpoint(&cfg, &prepared).to_bytes(), lines)
    };
    assert_eq!(run(), run());
}

#[test]
fn different_seeds_diverge() {
    let ds = dataset();
    let bytes = |seed| {
        let cfg = quick(seed, 1);
        let prepared = prepare(&ds, &cfg).unwrap();
        let mut state = TrainState::new(&cfg, &prepared).unwrap();
        train_epochs(&mut state, &prepared, &cfg, TrainOptions::default(), &mut |_| {}).unwrap();
        state.model.params.by_name("head.l0.w").unwrap().clone()
    };
    assert_ne!(bytes(1), bytes(2));
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let ds = dataset();
    let full_cfg = quick(9, 4);
    let prepared = prepare(&ds, &full_cfg).unwrap();
    let mut straight = TrainState::new(&full_cfg, &prepared).unwrap();
    train_epochs(&mut straight, &prepared, &full_cfg, TrainOptions::default(), &mut |_| {}).unwrap();

    let half_cfg = quick(9, 2);
    let mut first = TrainState::new(&half_cfg, &prepared).unwrap();
    train_epochs(&mut first, &prepared, &half_cfg, TrainOptions::default(), &mut |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.hgtd");
    first.checkpoint(&half_cfg, &prepared).save(&path).unwrap();

    let mut resumed = TrainState::resume(&full_cfg, &prepared, &Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(resumed.epoch, 2);
    train_epochs(&mut resumed, &prepared, &full_cfg, TrainOptions::default(), &mut |_| {}).unwrap();
    for ((name, a), (_, b)) in straight.model.params.iter().zip(resumed.model.params.iter()) {
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn resume_rejects_a_changed_config() {
    let ds = dataset();
    let cfg = quick(9, 1);
    let prepared = prepare(&ds, &cfg).unwrap();
    let state = TrainState::new(&cfg, &prepared).unwrap();
    let ck = state.checkpoint(&cfg, &prepared);
    let changed = TrainConfig { lr: 1e-3, ..cfg.clone() };
    assert!(matches!(
        TrainState::resume(&changed, &prepared, &ck),
        Err(hgtdp::Error::Checkpoint(_))
    ));
    let more_epochs = TrainConfig { epochs: 50, ..cfg };
    assert!(TrainState::resume(&more_epochs, &prepared, &ck).is_ok());
}

#[test]
fn one_step_updates_every_prompt_generator_block() {
    let ds = fixtures::four_pair_fixture();
    let cfg = TrainConfig {
        seed: 1,
        epochs: 1,
        ..TrainConfig::default()
    };
    let prepared = prepare(&ds, &cfg).unwrap();
    let mut state = TrainState::new(&cfg, &prepared).unwrap();
    let before = state.model.params.clone();
    train_epochs(&mut state, &prepared, &cfg, TrainOptions::default(), &mut |_| {}).unwrap();
    for id in state.model.prompt_params() {
        let name = state.model.params.name(id);
        assert!(state.touched[id.index()], "{name} received no gradient");
        assert_ne!(state.model.params.get(id), before.get(id), "{name} unchanged");
    }
}

#[test]
fn evaluation_is_repeatable_and_well_formed() {
    let ds = dataset();
    let cfg = quick(2, 2);
    let prepared = prepare(&ds, &cfg).unwrap();
    let mut state = TrainState::new(&cfg, &prepared).unwrap();
    train_epochs(&mut state, &prepared, &cfg, TrainOptions::default(), &mut |_| {}).unwrap();
    let a = evaluate(&state.model, &prepared, Split::Test, 3).unwrap();
    let b = evaluate(&state.model, &prepared, Split::Test, 64).unwrap();
    assert_eq!(a, b);
    a.check().unwrap();
    assert_eq!(a.n_samples, 4);
}
