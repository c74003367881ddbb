use std::fs;
use std::path::Path;

use proptest::prelude::*;
use psme::dataset::{self, MetaRow};
use psme::synth::{self, SynthConfig};
use psme::{checkpoint, config, tenfile, IoError};
use psme_core::data::{FrameStack, MeSample, SignalClip};
use psme_core::model::Model;
use psme_core::Tensor;

fn small() -> SynthConfig {
    SynthConfig {
        subjects: 2,
        per_subject: 2,
        size: 12,
        min_frames: 2,
        max_frames: 4,
        ..Default::default()
    }
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let samples = synth::generate(&small()).unwrap();
    dataset::save_dataset(dir.path(), &samples).unwrap();
    let back = dataset::load_samples(dir.path()).unwrap();
    assert_eq!(back.len(), samples.len());
    for (a, b) in samples.iter().zip(&back) {
        assert_eq!(a, b);
        let bits = |s: &MeSample| s.signals.channels.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
        assert_eq!(a.onset_s.to_bits(), b.onset_s.to_bits());
    }
    let meta = fs::read_to_string(dir.path().join("meta.csv")).unwrap();
    assert!(meta.starts_with("sample_id,subject_id,label,n_frames,fps,ps_rate,onset_s,offset_s\n"));
    let ps = fs::read_to_string(dir.path().join("s00_00/ps.csv")).unwrap();
    assert!(ps.starts_with("t,eda,ecg,ppg\n0,"));
}

#[test]
fn save_then_load_twice_gives_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let s = synth::generate(&small()).unwrap();
    dataset::save_dataset(a.path(), &s).unwrap();
    dataset::save_dataset(b.path(), &dataset::load_samples(a.path()).unwrap()).unwrap();
    for f in ["meta.csv", "s01_01/colour.ten", "s01_01/depth.ten", "s01_01/ps.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{}", f);
    }
}

fn one_sample(frames: usize) -> (MeSample, MetaRow) {
    let mut s = synth::generate(&small()).unwrap().remove(0);
    let c = Tensor::zeros(&[frames, 3, 4, 4]);
    let d = Tensor::zeros(&[frames, 1, 4, 4]);
    s.frames = FrameStack::new(c, d).unwrap();
    let row = MetaRow::of(&s);
    (s, row)
}

#[test]
fn each_failure_has_its_own_error() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (s, row) = one_sample(3);
    dataset::save_sample(root, &s).unwrap();
    assert_eq!(dataset::load_sample(root, &row).unwrap(), s);

    let colour = root.join(&s.sample_id).join("colour.ten");
    let good = fs::read(&colour).unwrap();
    let mut bad = good.clone();
    bad[..4].copy_from_slice(b"NOPE");
    fs::write(&colour, &bad).unwrap();
    assert!(matches!(dataset::load_sample(root, &row), Err(IoError::BadMagic(_))));
    fs::write(&colour, &good[..good.len() - 2]).unwrap();
    assert!(matches!(dataset::load_sample(root, &row), Err(IoError::Format { .. })));
    fs::write(&colour, &good).unwrap();

    let wrong = MetaRow { n_frames: 4, ..row.clone() };
    assert!(matches!(dataset::load_sample(root, &wrong), Err(IoError::Mismatch { .. })));

    fs::remove_file(root.join(&s.sample_id).join("depth.ten")).unwrap();
    assert!(matches!(dataset::load_sample(root, &row), Err(IoError::Missing(_))));

    // 16 frames on disk violate the clip-length invariant
    let t16 = |c| Tensor::zeros(&[16, c, 4, 4]);
    let dir16 = root.join("long");
    fs::create_dir_all(&dir16).unwrap();
    tenfile::write(&dir16.join("colour.ten"), &t16(3)).unwrap();
    tenfile::write(&dir16.join("depth.ten"), &t16(1)).unwrap();
    dataset::write_signals(&dir16.join("ps.csv"), &s.signals).unwrap();
    let long = MetaRow {
        sample_id: "long".into(),
        n_frames: 16,
        ..row.clone()
    };
    let e = dataset::load_sample(root, &long).unwrap_err();
    assert!(matches!(e, IoError::Mismatch { .. }) && e.to_string().contains("15-frame"), "{}", e);

    fs::write(root.join("long/ps.csv"), "t,eda,ecg\n0,1,2\n").unwrap();
    assert!(matches!(dataset::read_signals(&root.join("long/ps.csv"), 100.0), Err(IoError::Csv { line: 1, .. })));
    fs::write(root.join("long/ps.csv"), "t,eda,ecg,ppg\n0,1,2,3\n0.01,1,x,3\n").unwrap();
    assert!(matches!(dataset::read_signals(&root.join("long/ps.csv"), 100.0), Err(IoError::Csv { line: 3, .. })));
    assert!(matches!(dataset::read_meta(&root.join("nowhere")), Err(IoError::Missing(_))));
}

#[test]
fn prepared_dataset_has_standardised_signals() {
    let s = synth::generate(&small()).unwrap();
    let d = dataset::prepare(&s, &Default::default(), None).unwrap();
    assert_eq!(d.num_classes, s.iter().map(|x| x.label + 1).max().unwrap());
    for p in &d.samples {
        assert_eq!(p.ps.shape(), &[3, 300]);
        for ch in p.ps.data().chunks(300) {
            let mean = ch.iter().map(|&v| v as f64).sum::<f64>() / 300.0;
            let sd = (ch.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 300.0).sqrt();
            assert!(mean.abs() < 1e-6 && (sd - 1.0).abs() < 1e-3, "{} {}", mean, sd);
        }
    }
}

#[test]
fn spectra_separate_the_seed_42_classes() {
    let cfg = SynthConfig { size: 16, ..Default::default() };
    let s = synth::generate(&cfg).unwrap();
    assert_eq!(s.len(), 72);
    let subjects: std::collections::BTreeSet<_> = s.iter().map(|x| x.subject_id.clone()).collect();
    assert_eq!(subjects.len(), 12);
    assert!(s.iter().all(|x| (5..=15).contains(&x.frames.frames())));
    let acc = synth::centroid_accuracy(&s, 3, synth::CENTROID_BINS);
    assert!(acc > 0.9, "{}", acc);
}

#[test]
fn checkpoint_round_trip_and_shape_checks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config::parse(
        "backbone.input_size = 12\nbackbone.stages = 2:3:2\nbackbone.feature_dim = 4\ndepth_attention.tokens = 2\ndepth_attention.d_model = 2\ndepth_attention.heads = 1\nfusion_attention.tokens = 2\nfusion_attention.d_model = 2\nfusion_attention.heads = 1\nps.input_length = 64\nps.grouped_blocks = 3:1 5:2\nps.mixed_blocks = 3:2\nps.feature_dim = 4\nseed = 5",
        Path::new("x"),
    )
    .unwrap();
    let params = Model::new(cfg.model.clone()).unwrap().init_params(5).unwrap();
    let ck = checkpoint::Checkpoint {
        config: cfg.clone(),
        params: params.clone(),
        loss_log: vec![1.25, 0.5],
    };
    checkpoint::save(dir.path(), &ck).unwrap();
    let back = checkpoint::load(dir.path()).unwrap();
    assert!(back.params.bit_identical(&params));
    assert_eq!(back.config, cfg);
    assert_eq!(back.loss_log, vec![1.25, 0.5]);

    tenfile::write(&dir.path().join("params/head.w.ten"), &Tensor::zeros(&[1])).unwrap();
    assert!(matches!(checkpoint::load(dir.path()), Err(IoError::Mismatch { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ten_files_round_trip(shape in prop::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
        let n: usize = shape.iter().product();
        let vals: Vec<f32> = (0..n).map(|i| f32::from_bits((seed.wrapping_mul(i as u64 + 1) >> 33) as u32 & 0x7f7f_ffff)).map(|v| if v.is_finite() { v } else { 0.0 }).collect();
        let t = Tensor::new(&shape, vals).unwrap();
        let bytes = tenfile::encode(&t);
        let back = tenfile::decode(&bytes, Path::new("p")).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn signal_csv_round_trips(vals in prop::collection::vec(-1e6f64..1e6, 2..40), rate in 1.0f64..1000.0) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ps.csv");
        let clip = SignalClip::new(rate, [vals.clone(), vals.iter().map(|v| v * 1e-9).collect(), vals.iter().rev().cloned().collect()]).unwrap();
        dataset::write_signals(&p, &clip).unwrap();
        prop_assert_eq!(dataset::read_signals(&p, rate).unwrap(), clip);
    }
}
