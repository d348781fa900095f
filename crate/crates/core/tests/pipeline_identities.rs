mod common;

use common::*;
use neurodecode::data::generate_synthetic;
use neurodecode::data::montage::Region;
use neurodecode::evaluation::{apply_band, apply_region, apply_window, BandSpec, RegionChoice, WindowMode, WindowSpec};
use neurodecode::params::ParamStore;
use neurodecode::pipeline::*;

fn same_bits(a: &[ParamStore], b: &[ParamStore]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.iter().zip(y.iter()).all(|((n, t), (m, u))| {
                n == m && t.shape() == u.shape() && t.iter().zip(u.iter()).all(|(p, q)| p.to_bits() == q.to_bits())
            })
        })
}

#[test]
fn full_restrictions_reproduce_the_baseline() {
    let data = generate_synthetic(&tiny_spec(0)).unwrap();
    let cfg = tiny_pipeline_config();
    let run = run_pipeline(&data.train, &data.test, &data.bank, &cfg, 0).unwrap();
    let base = &run.stage2;
    let p = &run.prepared;

    let window = WindowSpec::new(WindowMode::Cumulative, 1000).unwrap();
    let band = BandSpec::all().into_iter().find(|b| b.is_identity()).unwrap();
    let restricted = [
        (apply_window(&p.train, &window).unwrap(), apply_window(&p.test, &window).unwrap()),
        (apply_band(&p.train, &band, 4).unwrap(), apply_band(&p.test, &band, 4).unwrap()),
        (
            apply_region(&p.train, &RegionChoice::All).unwrap().unwrap(),
            apply_region(&p.test, &RegionChoice::All).unwrap().unwrap(),
        ),
    ];
    for (train, test) in restricted {
        assert_eq!(train, p.train);
        assert_eq!(test, p.test);
        let s = run_stage2(&train, &test, &data.bank, &run.stage1, &cfg, 0).unwrap();
        assert!(same_bits(&s.checkpoint_params(), &base.checkpoint_params()));
        assert_eq!(s.evaluation, base.evaluation);
        assert!(s.reinitialized.is_empty());
    }

    let rows = temporal_window_analysis(p, &data.bank, &run.stage1, &[window], &cfg, 0).unwrap();
    assert_eq!(rows[0].image_top_k, base.evaluation.image.top_k_accuracy);
    assert_eq!(rows[0].text_top_k, base.evaluation.text.top_k_accuracy);
}

#[test]
fn single_channel_input_runs_end_to_end() {
    let data = generate_synthetic(&tiny_spec(1)).unwrap();
    let cfg = tiny_pipeline_config();
    let p = prepare(&data.train, &data.test, &cfg);
    let stage1 = run_stage1(&p, &data.bank, &cfg, 1).unwrap();
    let s = run_stage2(&p.train.select_channels(&[5]), &p.test.select_channels(&[5]), &data.bank, &stage1, &cfg, 1).unwrap();
    assert_eq!(s.test.channels(), 1);
    assert!(s.evaluation.image.top(1).unwrap().is_finite());
    // The graph and spatial blocks change shape with the channel count.
    assert!(s.reinitialized.contains(&"subject_maps".to_string()));
}

#[test]
fn too_short_windows_are_skipped_with_a_reason() {
    let data = generate_synthetic(&tiny_spec(2)).unwrap();
    let cfg = tiny_pipeline_config();
    let p = prepare(&data.train, &data.test, &cfg);
    let stage1 = run_stage1(&p, &data.bank, &cfg, 2).unwrap();
    // 100 ms at 50 Hz is 5 samples; the temporal block needs more.
    let w = WindowSpec::new(WindowMode::Cumulative, 100).unwrap();
    let rows = temporal_window_analysis(&p, &data.bank, &stage1, &[w], &cfg, 2).unwrap();
    assert!(rows[0].skipped.as_deref().unwrap().contains("at least"));
}

#[test]
fn planted_occipital_signal_beats_frontal() {
    let mut wins = 0;
    for seed in 0..3 {
        let spec = neurodecode::data::SyntheticSpec {
            signal_region: Some(Region::Occipital),
            ..tiny_spec(seed)
        };
        let data = generate_synthetic(&spec).unwrap();
        let mut cfg = tiny_pipeline_config();
        cfg.align.max_epochs = 20;
        let p = prepare(&data.train, &data.test, &cfg);
        let stage1 = run_stage1(&p, &data.bank, &cfg, seed).unwrap();
        let regions = [RegionChoice::Only(Region::Occipital), RegionChoice::Only(Region::Frontal)];
        let rows = spatial_region_analysis(&p, &data.bank, &stage1, &regions, &cfg, seed).unwrap();
        let score = |r: &AnalysisRow| r.image_top_k.values().sum::<f64>();
        eprintln!("seed {seed}: occipital {:?} frontal {:?}", rows[0].image_top_k, rows[1].image_top_k);
        if score(&rows[0]) > score(&rows[1]) {
            wins += 1;
        }
    }
    assert!(wins >= 2, "occipital won {wins}/3");
}

#[test]
fn noise_free_alignment_beats_uniform_loss() {
    let spec = neurodecode::data::SyntheticSpec {
        noise_std: 0.0,
        ..tiny_spec(4)
    };
    let data = generate_synthetic(&spec).unwrap();
    let mut cfg = tiny_pipeline_config();
    cfg.align.max_epochs = 30;
    cfg.align.patience = 30;
    let run = run_pipeline(&data.train, &data.test, &data.bank, &cfg, 4).unwrap();
    let last = run.stage2.history().last().unwrap();
    let uniform = (cfg.align.batch_size as f64).ln();
    assert!(last.epoch <= 30);
    assert!(last.train_loss < uniform, "loss {} vs ln B {uniform}", last.train_loss);
}

#[test]
fn validation_split_is_fixed_and_can_be_frozen_to_a_file() {
    let data = generate_synthetic(&tiny_spec(0)).unwrap();
    let mut cfg = tiny_pipeline_config();
    let p = prepare(&data.train, &data.test, &cfg);
    let a = cfg.validation_split(&p.train).unwrap();
    cfg.split_seed = 5;
    let b = cfg.validation_split(&p.train).unwrap();
    assert_ne!(a.val, b.val);

    let tmp = tempfile::TempDir::new().unwrap();
    let file = tmp.path().join("val_split.json");
    cfg.val_split_file = Some(file.clone());
    assert_eq!(cfg.validation_split(&p.train).unwrap().val, b.val);
    assert!(file.is_file());
    // Once frozen, the file wins over the seed.
    cfg.split_seed = 9;
    assert_eq!(cfg.validation_split(&p.train).unwrap().val, b.val);
    let fewer = p.train.select(&(0..p.train.len() - 1).collect::<Vec<_>>());
    assert!(cfg.validation_split(&fewer).is_err());
}
