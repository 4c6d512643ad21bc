use std::fs;

use tempfile::TempDir;
use tunet::formats::checkpoint::{config_path, decode_params, encode_params};
use tunet::formats::{load_checkpoint, read_dataset, save_checkpoint, write_dataset};
use tunet::RunConfig;
use tunet_core::data::{synth_dataset, SynthConfig};
use tunet_core::model::{TUNet, TUNetConfig};

#[test]
fn dataset_round_trip() {
    let ds = synth_dataset(&SynthConfig {
        n: 12,
        classes: 5,
        side: 16,
        seed: 4,
        imbalance: 1.5,
    })
    .unwrap();
    let tmp = TempDir::new().unwrap();
    write_dataset(tmp.path(), &ds).unwrap();
    let back = read_dataset(tmp.path()).unwrap();
    assert!(back.labelled && back.classes_declared);
    assert_eq!(back.dataset, ds);

    // Without labels and dataset.cfg the images still load.
    fs::remove_file(tmp.path().join("labels.csv")).unwrap();
    fs::remove_file(tmp.path().join("dataset.cfg")).unwrap();
    let bare = read_dataset(tmp.path()).unwrap();
    assert!(!bare.labelled && !bare.classes_declared);
    assert_eq!(bare.dataset.len(), 12);
    assert!(bare.dataset.samples.iter().all(|s| s.labels.is_empty()));
    for (a, b) in bare.dataset.samples.iter().zip(&ds.samples) {
        assert_eq!(a.image(), b.image());
    }
}

#[test]
fn missing_image_is_an_io_error_with_path() {
    let ds = synth_dataset(&SynthConfig {
        n: 3,
        side: 16,
        ..SynthConfig::default()
    })
    .unwrap();
    let tmp = TempDir::new().unwrap();
    write_dataset(tmp.path(), &ds).unwrap();
    let victim = tmp.path().join("images").join(format!("{}.tunt", ds.samples[1].id));
    fs::remove_file(&victim).unwrap();
    let err = read_dataset(tmp.path()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains(victim.to_str().unwrap()));
}

#[test]
fn checkpoint_of_a_real_model_round_trips() {
    let model = TUNet::new(TUNetConfig {
        side: 32,
        classes: 4,
        levels: 3,
        base_width: 8,
        dropout: 0.25,
    })
    .unwrap();
    let params = model.init::<f32>(9);
    let bytes = encode_params(&params).unwrap();
    let back = decode_params(&bytes, "mem").unwrap();
    assert_eq!(back, params);
    model.check_params(&back).unwrap();

    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("m.tunc");
    let mut cfg = RunConfig::default();
    cfg.set("side", "32").unwrap();
    cfg.set("classes", "4").unwrap();
    cfg.set("levels", "3").unwrap();
    cfg.set("base_width", "8").unwrap();
    save_checkpoint(&path, &params, &cfg).unwrap();
    assert!(config_path(&path).is_file());
    let (p, c) = load_checkpoint(&path).unwrap();
    assert_eq!(p, params);
    assert_eq!(c.model_config(32, 4), *model.config());
    assert_eq!(c.to_text(), cfg.to_text());
}
