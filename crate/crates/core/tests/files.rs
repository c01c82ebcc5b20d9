use std::fs::File;
use std::io::Write;

use tumorgrowth::dataio::{load_series, subject_ids, DataError};
use tumorgrowth::models::{train, DynamicsModel, ModelKind, Stage, TrainConfig};
use tumorgrowth::neuralnet::{read_checkpoint, write_checkpoint};

const CSV: &str = "# comment line\nid,time_days,volume_mm3\n2,22,90\n2,24,180\n2,27,400\n2,30,800\n1,22,80\n1,25,240\n1,28,600\n1,32,980\n";

#[test]
fn loads_subjects_from_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    File::create(&path).unwrap().write_all(CSV.as_bytes()).unwrap();
    assert_eq!(subject_ids(&path).unwrap(), vec![1, 2]);
    let s = load_series(&path, 1).unwrap();
    assert_eq!(s.times, vec![22.0, 25.0, 28.0, 32.0]);
    assert!(matches!(load_series(&path, 3), Err(DataError::NotFound(3))));
    assert!(load_series(dir.path().join("missing.csv"), 1).is_err());
}

#[test]
fn trained_model_survives_a_checkpoint_file() {
    let data: Vec<(f64, f64)> = (0..11).map(|i| (i as f64 / 10.0, 0.05 + 0.09 * i as f64)).collect();
    let cfg = TrainConfig {
        schedule: vec![Stage {
            learning_rate: 0.01,
            epochs: 5,
        }],
        ..TrainConfig::ude()
    };
    let (model, _) = train(&ModelKind::ude(), &data, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ude.json");
    write_checkpoint(File::create(&path).unwrap(), &model.to_checkpoint(cfg.seed).unwrap()).unwrap();
    let back = DynamicsModel::from_checkpoint(&read_checkpoint(File::open(&path).unwrap()).unwrap()).unwrap();
    assert_eq!(back, model);
}
