use lanechange::checkpoint::Checkpoint;
use lanechange::events::{build_dataset, WindowSpec};
use lanechange::features::{acc_config, prepare_split};
use lanechange::nn::{predict, NetworkDims};
use lanechange::synthgen::{generate_recordings, SynthConfig};
use lanechange::training::{train, TrainConfig};

fn small_setup(
) -> (Vec<lanechange::FeatureSequence64>, Vec<lanechange::FeatureSequence64>, lanechange::features::FeatureManifest) {
    let recs: Vec<_> = generate_recordings(&SynthConfig { vehicle_count: 60, ..SynthConfig::velocity_signal(1) }, 1)
        .unwrap()
        .into_iter()
        .map(|o| o.recording)
        .collect();
    let ds = build_dataset(&recs, &WindowSpec::default(), 1, 0.8).unwrap();
    prepare_split(&ds.train, &ds.test, &acc_config(), 1, &recs).unwrap()
}

#[test]
fn thread_count_does_not_change_the_result() {
    let (train_set, _, _) = small_setup();
    let dims = NetworkDims::new(acc_config().width(), 6);
    let cfg = TrainConfig { epochs: 3, batch_size: 8, seed: 3, ..Default::default() };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train(&train_set, &dims, &cfg, None).unwrap())
    };
    let (a, ha) = run(1);
    let (b, hb) = run(3);
    assert_eq!(a, b);
    assert_eq!(ha.to_csv(false), hb.to_csv(false));
}

#[test]
fn loss_falls_and_training_accuracy_rises() {
    let (train_set, test_set, _) = small_setup();
    let dims = NetworkDims::new(acc_config().width(), 16);
    let cfg = TrainConfig { epochs: 40, seed: 5, ..Default::default() };
    let (params, history) = train(&train_set, &dims, &cfg, Some(&test_set)).unwrap();
    let first = &history.epochs[0];
    let last = history.epochs.last().unwrap();
    assert!(last.loss < first.loss * 0.8, "{} -> {}", first.loss, last.loss);
    assert!(last.accuracy > 0.75, "{}", last.accuracy);
    assert!(last.validation.is_some());
    assert!(params.all_finite());
}

#[test]
fn early_stopping_ends_before_the_epoch_budget() {
    let (train_set, test_set, _) = small_setup();
    let dims = NetworkDims::new(acc_config().width(), 4);
    let cfg = TrainConfig {
        epochs: 200,
        learning_rate: 0.0,
        early_stop: Some(lanechange::training::EarlyStop { patience: 2, min_delta: 0.0 }),
        ..Default::default()
    };
    let (_, history) = train(&train_set, &dims, &cfg, Some(&test_set)).unwrap();
    assert_eq!(history.epochs.len(), 4);
}

#[test]
fn checkpoint_reproduces_predictions() {
    let (train_set, test_set, manifest) = small_setup();
    let dims = NetworkDims::new(acc_config().width(), 5);
    let (params, _) = train(&train_set, &dims, &TrainConfig { epochs: 2, ..Default::default() }, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    Checkpoint::new(&params, 0, manifest, None).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    for s in &test_set {
        assert_eq!(predict(s, &loaded.params).unwrap(), predict(s, &params).unwrap());
    }
    let p32 = loaded.params_as::<f32>();
    for s in &test_set {
        let a = predict(&s.cast::<f32>(), &p32).unwrap() as f64;
        assert!((a - predict(s, &params).unwrap()).abs() < 1e-4);
    }
}

#[test]
fn single_class_is_rejected() {
    let (train_set, _, _) = small_setup();
    let only: Vec<_> = train_set.into_iter().filter(|s| s.label == lanechange::events::Label::Keep).collect();
    let dims = NetworkDims::new(acc_config().width(), 4);
    assert!(matches!(train(&only, &dims, &TrainConfig::default(), None), Err(lanechange::Error::EmptyClass(_))));
}
