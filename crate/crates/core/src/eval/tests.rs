use super::*;
use crate::fr::{Extractor, FaceSample, FrDescriptor};
use crate::render::{make_synthetic_asset_sized, sh_constant};
use crate::shapes::{build_corpus, CorpusConfig};

fn small_asset(id: u64, yaw: f64) -> FaceAsset {
    make_synthetic_asset_sized(id, yaw, 0.0, &sh_constant([1.0; 3]), 32, 64).unwrap()
}

fn frs(classes: usize) -> FrSystem {
    let desc = FrDescriptor {
        extractor: Extractor::Relu,
        input_size: 16,
        class_names: (0..classes).map(|i| format!("c{i}")).collect(),
    };
    let mut f = FrSystem::new(desc, 5).unwrap();
    f.freeze();
    f
}

fn set_on(asset: &FaceAsset, sticker: f64, mask: f64) -> StickerSet {
    let n = 8;
    let items = AttackSpec::dodging(0)
        .combination
        .anchors(asset)
        .unwrap()
        .into_iter()
        .map(|region| StickerItem {
            sticker: Tensor::full(&[3, n, n], sticker),
            mask: Tensor::full(&[1, n, n], mask),
            region,
        })
        .collect();
    StickerSet::new(items).unwrap()
}

#[test]
fn report_arithmetic() {
    let imp = AttackSpec::impersonating(0, 2);
    let mut preds = vec![2; 33];
    preds.extend(vec![0; 77]);
    let r = SuccessReport::from_predictions(&imp, preds).unwrap();
    assert_eq!((r.frames_evaluated, r.successes), (110, 33));
    assert_eq!(r.success_rate, 0.3);
    assert_eq!(SuccessReport::from_predictions(&imp, vec![2; 7]).unwrap().success_rate, 1.0);
    assert_eq!(SuccessReport::from_predictions(&AttackSpec::dodging(1), vec![1; 9]).unwrap().success_rate, 0.0);
    assert!(SuccessReport::from_predictions(&imp, Vec::new()).is_err());
    let back: SuccessReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
    assert!(r.to_text().contains("30.00%"));
}

#[test]
fn empty_masks_leave_frames_untouched() {
    let frames = vec![small_asset(1, 0.0), small_asset(1, 12.0)];
    let bank = FrameBank::new(frames.clone()).unwrap();
    let set = set_on(&frames[0], 0.9, 0.3);
    for (i, f) in frames.iter().enumerate() {
        let img = bank.apply(i, &set, Some(MASK_THRESHOLD)).unwrap();
        assert_eq!(img.to_vec(), f.image_planar());
        let soft = bank.apply(i, &set, None).unwrap();
        assert_ne!(soft.to_vec(), f.image_planar());
    }
    assert!(FrameBank::new(Vec::new()).is_err());
    let f = frs(2);
    assert!(evaluate(&f, &set, &[], &AttackSpec::dodging(0)).is_err());
    let r = evaluate(&f, &set, &frames, &AttackSpec::dodging(0)).unwrap();
    assert_eq!(r.frames_evaluated, 2);
    let plain = predict(&f, &Tensor::concat(&frames.iter().map(|a| Tensor::new(a.image_planar(), &[1, 3, 32, 32])).collect::<Vec<_>>(), 0)).unwrap();
    assert_eq!(r.predictions, plain);
}

#[test]
fn distance_resampling() {
    let img = Tensor::new((0..3 * 64).map(|i| (i % 7) as f64 / 7.0).collect(), &[3, 8, 8]);
    assert_eq!(at_distance(&img, 1.0).unwrap().to_vec(), img.to_vec());
    let far = at_distance(&img, 2.0).unwrap();
    assert_eq!(far.shape(), &[3, 4, 4]);
    let mean = |t: &Tensor| t.data().iter().sum::<f64>() / t.numel() as f64;
    assert!((mean(&far) - mean(&img)).abs() < 1e-12);
    assert_eq!(at_distance(&img, 0.5).unwrap().shape(), &[3, 16, 16]);
    assert!(at_distance(&img, 0.0).is_err());
}

#[test]
fn export_alpha_and_round_trip() {
    let a = small_asset(2, 0.0);
    let dir = tempfile::tempdir().unwrap();
    for (m, alpha) in [(1.0, 255u8), (0.0, 0u8)] {
        let paths = export_stickers(&set_on(&a, 0.4, m), dir.path(), 0.5).unwrap();
        assert_eq!(paths.len(), 3);
        let png = load_png(&paths[1]).unwrap();
        assert!(png.data.chunks(4).all(|px| px[3] == alpha));
    }
    let n = 8;
    let mut set = set_on(&a, 0.0, 0.0);
    let mask: Vec<f64> = (0..n * n).map(|p| ((p * 37) % 11) as f64 / 10.0).collect();
    let rgb: Vec<f64> = (0..3 * n * n).map(|p| ((p * 13) % 255) as f64 / 255.0).collect();
    set.items[0].mask = Tensor::new(mask.clone(), &[1, n, n]);
    set.items[0].sticker = Tensor::new(rgb.clone(), &[3, n, n]);
    let paths = export_stickers(&set, dir.path(), 0.5).unwrap();
    let (s, m) = import_sticker(&paths[0]).unwrap();
    assert_eq!(m.to_vec(), binarize_mask(&set.items[0].mask).to_vec());
    for (x, y) in s.data().iter().zip(&rgb) {
        assert!((x - y).abs() < 1e-12);
    }
    let sheet = std::fs::read_to_string(dir.path().join("placement.txt")).unwrap();
    assert_eq!(sheet.lines().count(), 4);
    assert!(sheet.contains(set.items[2].region.name.label()));
}

#[test]
fn pairs_and_config_validation() {
    assert_eq!("3".parse::<AttackPair>().unwrap(), AttackPair { attacker: 3, target: None });
    let p: AttackPair = "3-5".parse().unwrap();
    assert_eq!(p.target, Some(5));
    assert_eq!(p.to_string(), "3-5");
    assert!("x-1".parse::<AttackPair>().is_err());
    let ok = ExperimentConfig::new(SweepAxis::Sizes(DEFAULT_SIZES.to_vec()), vec![p]);
    assert!(ok.validate(6).is_ok());
    assert!(ok.validate(4).is_err());
    let mut bad = ok.clone();
    bad.axis = SweepAxis::Combinations(vec![]);
    assert!(bad.validate(6).is_err());
    bad.axis = SweepAxis::Combinations(vec![11]);
    assert!(bad.validate(6).is_err());
    bad.axis = SweepAxis::Conditions {
        condition: Condition::Pose,
        values: vec![45.0],
    };
    assert!(bad.validate(6).is_err());
    assert_eq!(all_combination_ids(), (1..=10).collect::<Vec<_>>());
    let json = serde_json::to_string(&ok).unwrap();
    assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), ok);
}

#[test]
fn table_best_and_monotonicity() {
    let row = |k: &str, r: f64| SweepRow {
        key: k.into(),
        cells: vec![],
        mean_rate: r,
    };
    let t = SweepTable {
        axis: "sizes".into(),
        rows: vec![row("80px", 0.2), row("90px", 0.5), row("100px", 0.5)],
        reference: reference_rows(&SweepAxis::Sizes(vec![])),
    };
    assert_eq!(t.best().unwrap().key, "90px");
    assert!(t.is_non_decreasing());
    let text = t.to_text();
    assert!(text.contains("best: 90px") && text.contains("non-decreasing in size: yes") && text.contains("16.89%"));
    assert_eq!(t.to_tsv().lines().count(), 4);
}

#[test]
fn sweep_rows_and_cached_rerun() {
    let samples: Vec<FaceSample> = (0..2)
        .flat_map(|label| {
            [0.0, 6.0, -6.0, 10.0, -10.0].map(move |yaw| FaceSample {
                asset: small_asset(label as u64 + 1, yaw),
                label,
            })
        })
        .collect();
    let ds = FaceDataset::new(vec!["a".into(), "b".into()], samples).unwrap();
    let corpus = build_corpus(&CorpusConfig {
        per_kind: 2,
        seed: 3,
        ..CorpusConfig::default()
    })
    .unwrap();
    let f = frs(2);
    let inputs = SweepInputs {
        frs: &f,
        dataset: &ds,
        corpus: &corpus,
        pretrained: None,
        faces: None,
    };
    let mut cfg = ExperimentConfig::new(SweepAxis::Sizes(vec![6, 9]), vec![AttackPair { attacker: 0, target: None }]);
    cfg.train = TrainConfig {
        epochs: 1,
        batch_size: 2,
        critic_steps: 1,
        arch: "tiny".into(),
        ..TrainConfig::default()
    };
    cfg.craft_count = 2;
    cfg.sticker_size = 9;
    let dir = tempfile::tempdir().unwrap();
    let t1 = run_sweep(&inputs, &cfg, dir.path()).unwrap();
    assert_eq!(t1.rows.len(), 2);
    assert_eq!(t1.rows[0].key, "6px");
    let gen = dir.path().join("sizes/6px-0-r0/generator.ckpt");
    let stamp = std::fs::metadata(&gen).unwrap().modified().unwrap();
    let t2 = run_sweep(&inputs, &cfg, dir.path()).unwrap();
    assert_eq!(t1, t2);
    assert_eq!(std::fs::metadata(&gen).unwrap().modified().unwrap(), stamp);

    cfg.axis = SweepAxis::Conditions {
        condition: Condition::Distance,
        values: vec![1.0, 2.0],
    };
    let t3 = run_sweep(&inputs, &cfg, dir.path()).unwrap();
    assert_eq!(t3.rows.len(), 2);
    assert!(dir.path().join("condition-distance/attack-0-r0/generator.ckpt").exists());
    cfg.axis = SweepAxis::Conditions {
        condition: Condition::Pose,
        values: vec![0.0],
    };
    assert!(run_sweep(&inputs, &cfg, dir.path()).is_err());
}

#[test]
fn condition_frames_apply_the_override() {
    let faces = SyntheticFaces::default();
    let posed = condition_frames(&faces, 1, Some((Condition::Pose, 0.0)), 2).unwrap();
    let again = condition_frames(&faces, 1, Some((Condition::Pose, 0.0)), 2).unwrap();
    assert_eq!(posed[0].image, again[0].image);
    let plain = condition_frames(&faces, 1, None, 1).unwrap();
    let dim = condition_frames(&faces, 1, Some((Condition::Brightness, 0.5)), 1).unwrap();
    for c in 0..3 {
        assert!((dim[0].sh[c * 9] - 0.5 * plain[0].sh[c * 9]).abs() < 1e-12);
        assert_eq!(dim[0].sh[c * 9 + 1], plain[0].sh[c * 9 + 1]);
    }
    let mean = |a: &FaceAsset| a.image.iter().map(|&v| f64::from(v)).sum::<f64>();
    assert!(mean(&dim[0]) < mean(&plain[0]));
}
