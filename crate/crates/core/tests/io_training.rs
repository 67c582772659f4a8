use estn::config::ModelConfig;
use estn::imaging::save_image;
use estn::network::EstnWeights;
use estn::tensor::Tensor;
use estn::training::{load_pairs, train_loop, TrainConfig, TrainPair};
use estn::weights::{load_checkpoint, load_weights, load_weights_as, save_weights};
use estn::Error;

#[test]
fn weights_round_trip_and_cross_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    let model = EstnWeights::<f32>::build(&ModelConfig::tiny(6, 1, 2), 5).unwrap();
    save_weights(&model, &path).unwrap();
    assert_eq!(load_weights(&path).unwrap(), model);

    let mut wider = ModelConfig::tiny(12, 1, 2);
    wider.train_patch = 8;
    match load_weights_as(&path, &wider) {
        Err(Error::TensorShape { name, .. }) => assert_eq!(name, "head.weight"),
        other => panic!("expected a shape error, got {other:?}"),
    }
    match load_weights_as(&path, &ModelConfig::tiny(6, 2, 2)) {
        Err(Error::MissingTensor(name)) => assert!(name.starts_with("estm1."), "{name}"),
        other => panic!("expected a missing tensor, got {other:?}"),
    }
}

#[test]
fn truncated_weights_name_the_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    let model = EstnWeights::<f32>::build(&ModelConfig::tiny(6, 1, 2), 5).unwrap();
    save_weights(&model, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
    let err = load_weights(&path).unwrap_err();
    assert!(matches!(err, Error::Corrupt(_)));
    assert!(err.to_string().contains("tail.bias"), "{err}");
}

#[test]
fn train_config_keys() {
    let mut t = TrainConfig::default();
    assert!(t.set("batch", "3").unwrap());
    assert!(t.set("lr", "1e-3").unwrap());
    assert!(t.set("milestones", "10,20").unwrap());
    assert!(!t.set("channels", "6").unwrap());
    assert!(t.set("patch", "x").is_err());
    assert_eq!((t.batch, t.schedule.initial, t.schedule.milestones.clone()), (3, 1e-3, vec![10, 20]));
    assert_eq!(t.schedule.lr_at(15), 5e-4);
}

fn write_hr(dir: &std::path::Path) {
    let hr = Tensor::from_fn(vec![3, 32, 32], |i| ((i * 37 + i / 32 * 11) % 256) as f32 / 255.0);
    save_image(&dir.join("a.png"), &hr).unwrap();
}

#[test]
fn training_is_deterministic_and_writes_outputs() {
    let data = tempfile::tempdir().unwrap();
    write_hr(data.path());
    let pairs = load_pairs(data.path(), 2).unwrap();
    let cfg = TrainConfig {
        batch: 2,
        patch: 8,
        iterations: 4,
        seed: 7,
        checkpoint_every: 2,
        ..TrainConfig::default()
    };
    let run = || {
        let out = tempfile::tempdir().unwrap();
        let mut w = EstnWeights::<f32>::build(&ModelConfig::tiny(6, 1, 2), 7).unwrap();
        let res = train_loop(&mut w, &pairs, &cfg, Some(out.path()), |_| {}).unwrap();
        let names: Vec<String> = res
            .checkpoints
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        let last = std::fs::read(res.checkpoints.last().unwrap()).unwrap();
        let csv = std::fs::read_to_string(out.path().join("loss.csv")).unwrap();
        let (restored, adam) = load_checkpoint(res.checkpoints.last().unwrap()).unwrap();
        assert_eq!(restored, w);
        assert_eq!(adam.unwrap().step, 4);
        (names, last, csv)
    };
    let (names, a, csv_a) = run();
    let (_, b, csv_b) = run();
    assert_eq!(names, ["checkpoint_000000.bin", "checkpoint_000002.bin", "checkpoint_000004.bin"]);
    assert_eq!(a, b);
    assert_eq!(csv_a, csv_b);
    assert_eq!(csv_a.lines().next(), Some("iteration,lr,loss"));
    assert_eq!(csv_a.lines().count(), 5);
}

#[test]
fn pairs_are_trimmed_to_the_scale() {
    let hr = Tensor::full(vec![3, 13, 10], 0.5f32);
    let p = TrainPair::from_hr(&hr, 3).unwrap();
    assert_eq!(p.hr.shape(), &[3, 12, 9]);
    assert_eq!(p.lr.shape(), &[3, 4, 3]);
    assert!(TrainPair::from_hr(&hr, 20).is_err());
}
