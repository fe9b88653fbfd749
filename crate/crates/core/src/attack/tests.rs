use super::*;
use crate::fr::{Extractor, FrDescriptor};
use crate::render::{make_synthetic_asset_sized, sh_constant};
use crate::shapes::{build_corpus, CorpusConfig};

fn corpus() -> ShapeCorpus {
    build_corpus(&CorpusConfig {
        per_kind: 4,
        seed: 1,
        ..CorpusConfig::default()
    })
    .unwrap()
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

fn assets() -> Vec<FaceAsset> {
    [(0.0, 0.0), (8.0, -4.0)]
        .iter()
        .map(|&(yaw, pitch)| make_synthetic_asset_sized(3, yaw, pitch, &sh_constant([1.0; 3]), 32, 64).unwrap())
        .collect()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        critic_steps: 2,
        epochs,
        arch: "tiny".into(),
        seed: 11,
        checkpoint_every: 1,
        ..TrainConfig::default()
    }
}

fn param_bits(ps: &crate::nn::ParamStore) -> Vec<u64> {
    ps.to_arrays("")
        .iter()
        .flat_map(|a| a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect()
}

#[test]
fn spec_validation_and_success() {
    assert!(AttackSpec::dodging(2).validate(3).is_ok());
    assert!(AttackSpec::dodging(3).validate(3).is_err());
    assert!(AttackSpec::impersonating(1, 1).validate(3).is_err());
    assert!(AttackSpec::impersonating(0, 5).validate(3).is_err());
    let d = AttackSpec::dodging(1);
    assert!(d.is_success(0) && !d.is_success(1));
    let i = AttackSpec::impersonating(1, 2);
    assert!(i.is_success(2) && !i.is_success(0) && !i.is_success(1));
    assert_eq!(d.combination.id, DEFAULT_COMBINATION);
    assert_eq!("impersonate".parse::<AttackMode>().unwrap(), AttackMode::Impersonating);
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    for bad in [
        TrainConfig { lr: 0.0, ..TrainConfig::default() },
        TrainConfig { alpha: -1.0, ..TrainConfig::default() },
        TrainConfig { critic_steps: 0, ..TrainConfig::default() },
        TrainConfig { adam_betas: (1.0, 0.9), ..TrainConfig::default() },
        TrainConfig { arch: "huge".into(), ..TrainConfig::default() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
}

#[test]
fn log_round_trip() {
    let recs = vec![
        LogRecord {
            step: 1,
            epoch: 1,
            kind: StepKind::Critic,
            critic: -0.25,
            shape: f64::NAN,
            adversarial: f64::NAN,
            tv: f64::NAN,
            generator: f64::NAN,
        },
        LogRecord {
            step: 2,
            epoch: 1,
            kind: StepKind::Generator,
            critic: f64::NAN,
            shape: 0.5,
            adversarial: -3.0,
            tv: 12.0,
            generator: 1e-3,
        },
    ];
    let text = format_log(&recs);
    assert!(text.starts_with(LOG_HEADER));
    let back = parse_log(&text).unwrap();
    assert_eq!(format_log(&back), text);
    assert!(parse_log("step\n1\t1\tcritic\t0").is_err());
}

#[test]
fn critic_updates_per_generator_update() {
    let (f, c) = (frs(2), corpus());
    let out = train_attack(&f, &assets(), &AttackSpec::dodging(0), &c, &config(3), None).unwrap();
    assert_eq!(out.epochs_run, 3);
    let kinds: Vec<StepKind> = out.log.iter().map(|r| r.kind).collect();
    let one = [StepKind::Critic, StepKind::Critic, StepKind::Generator];
    assert_eq!(kinds, one.repeat(3));
    for (i, r) in out.log.iter().enumerate() {
        assert_eq!(r.step, i + 1);
        assert_eq!(r.epoch, i / 3 + 1);
        match r.kind {
            StepKind::Critic => assert!(r.critic.is_finite() && r.generator.is_nan()),
            StepKind::Generator => assert!(r.generator.is_finite() && r.critic.is_nan()),
        }
    }
}

#[test]
fn zero_alpha_drops_the_adversarial_term() {
    let (f, c) = (frs(2), corpus());
    let cfg = TrainConfig { alpha: 0.0, ..config(2) };
    let out = train_attack(&f, &assets(), &AttackSpec::dodging(0), &c, &cfg, None).unwrap();
    for r in out.log.iter().filter(|r| r.kind == StepKind::Generator) {
        assert!(r.adversarial.is_finite());
        let want = r.shape + cfg.beta * r.tv;
        assert!((r.generator - want).abs() <= 1e-12 * want.abs().max(1.0), "{r:?}");
    }
    let cfg = TrainConfig { alpha: 3.0, ..config(1) };
    let out = train_attack(&f, &assets(), &AttackSpec::dodging(0), &c, &cfg, None).unwrap();
    let r = out.log.last().unwrap();
    let want = r.shape + 3.0 * r.adversarial + cfg.beta * r.tv;
    assert!((r.generator - want).abs() <= 1e-9 * want.abs().max(1.0));
}

#[test]
fn training_is_deterministic_and_leaves_the_recognizer_alone() {
    let (f, c) = (frs(3), corpus());
    let before = param_bits(&f.params);
    let spec = AttackSpec::impersonating(0, 2);
    let a = train_attack(&f, &assets(), &spec, &c, &config(2), None).unwrap();
    let b = train_attack(&f, &assets(), &spec, &c, &config(2), None).unwrap();
    assert_eq!(param_bits(&a.generator.params), param_bits(&b.generator.params));
    assert_eq!(format_log(&a.log), format_log(&b.log));
    assert_eq!(param_bits(&f.params), before);
    let other = TrainConfig { seed: 12, ..config(2) };
    let c2 = train_attack(&f, &assets(), &spec, &c, &other, None).unwrap();
    assert_ne!(param_bits(&a.generator.params), param_bits(&c2.generator.params));
}

#[test]
fn rejects_unfrozen_recognizer_and_bad_spec() {
    let c = corpus();
    let desc = FrDescriptor {
        extractor: Extractor::Relu,
        input_size: 16,
        class_names: vec!["a".into(), "b".into()],
    };
    let live = FrSystem::new(desc, 0).unwrap();
    assert!(AttackTrainer::new(&live, &assets(), &AttackSpec::dodging(0), &c, &config(1), None).is_err());
    let f = frs(2);
    assert!(AttackTrainer::new(&f, &assets(), &AttackSpec::dodging(2), &c, &config(1), None).is_err());
    assert!(AttackTrainer::new(&f, &[], &AttackSpec::dodging(0), &c, &config(1), None).is_err());
}

#[test]
fn shape_heads_stay_fixed_when_frozen() {
    let (f, c) = (frs(2), corpus());
    let cfg = TrainConfig { freeze_shape_heads: true, ..config(1) };
    let arch = GanArch::preset("tiny", 3).unwrap();
    let g0 = Generator::new(&arch, cfg.seed).unwrap();
    let out = train_attack(&f, &assets(), &AttackSpec::dodging(0), &c, &cfg, None).unwrap();
    let ids = g0.shape_head_params();
    for &id in &ids {
        assert_eq!(g0.params.get(id).data(), out.generator.params.get(id).data(), "{}", g0.params.name(id));
    }
    let moved = g0
        .sticker_head_params()
        .iter()
        .any(|&id| g0.params.get(id).data() != out.generator.params.get(id).data());
    assert!(moved);
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let (f, c) = (frs(2), corpus());
    let spec = AttackSpec::dodging(1);
    let dir = tempfile::tempdir().unwrap();
    let whole = train_attack(&f, &assets(), &spec, &c, &config(3), None).unwrap();

    let mut t = AttackTrainer::new(&f, &assets(), &spec, &c, &config(2), None).unwrap();
    run_attack_to_dir(&mut t, dir.path(), None, None).unwrap();
    let files = RunFiles::new(dir.path());
    assert!(files.state(1).exists() && files.state(2).exists() && files.generator().exists());
    assert_eq!(files.latest_state().unwrap(), files.state(2));

    let mut t = AttackTrainer::new(&f, &assets(), &spec, &c, &config(3), None).unwrap();
    run_attack_to_dir(&mut t, dir.path(), Some(&files.state(1)), None).unwrap();
    assert_eq!(t.epoch(), 3);
    assert_eq!(param_bits(&t.generator().params), param_bits(&whole.generator.params));
    let log = parse_log(&std::fs::read_to_string(files.log()).unwrap()).unwrap();
    assert_eq!(format_log(&log), format_log(&whole.log));
    let g = Generator::load(&files.generator()).unwrap();
    assert_eq!(param_bits(&g.params), param_bits(&whole.generator.params));

    let mut wrong = AttackTrainer::new(&f, &assets(), &AttackSpec::dodging(0), &c, &config(3), None).unwrap();
    assert!(run_attack_to_dir(&mut wrong, dir.path(), Some(&files.state(1)), None).is_err());
}

#[test]
fn monitor_can_stop_early() {
    let (f, c) = (frs(2), corpus());
    let dir = tempfile::tempdir().unwrap();
    let mut t = AttackTrainer::new(&f, &assets(), &AttackSpec::dodging(0), &c, &config(5), None).unwrap();
    let mut seen = Vec::new();
    let mut stop = |e: usize, _: &Generator| -> Result<bool> {
        seen.push(e);
        Ok(e == 2)
    };
    run_attack_to_dir(&mut t, dir.path(), None, Some(&mut stop)).unwrap();
    assert_eq!(seen, vec![1, 2]);
    assert_eq!(t.epoch(), 2);
    assert!(RunFiles::new(dir.path()).generator().exists());
}

#[test]
fn pretraining_logs_and_round_trips() {
    let c = corpus();
    let cfg = PretrainConfig {
        arch: "tiny".into(),
        epochs: 2,
        batch_size: 2,
        critic_steps: 3,
        ..PretrainConfig::default()
    };
    let (gan, log) = pretrain_shape_gan(&c, &cfg).unwrap();
    assert_eq!(log.len(), 8);
    assert_eq!(log.iter().filter(|r| r.kind == StepKind::Generator).count(), 2);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("gan.ckpt");
    gan.save(&p).unwrap();
    let back = ShapeGan::load(&p).unwrap();
    assert_eq!(param_bits(&back.generator.params), param_bits(&gan.generator.params));
    assert_eq!(param_bits(&back.discriminator.params), param_bits(&gan.discriminator.params));

    let (f, a) = (frs(2), assets());
    let t = AttackTrainer::new(&f, &a, &AttackSpec::dodging(0), &c, &config(1), Some(&gan)).unwrap();
    assert_eq!(param_bits(&t.generator().params), param_bits(&gan.generator.params));
}

#[test]
fn crafted_stickers_are_unit_range() {
    let arch = GanArch::preset("tiny", 3).unwrap();
    let g = Generator::new(&arch, 2).unwrap();
    let anchors = AttackSpec::dodging(0).combination.anchors(&assets()[0]).unwrap();
    let sets = craft_stickers(&g, 3, 4, &anchors).unwrap();
    assert_eq!(sets.len(), 3);
    for s in &sets {
        assert_eq!(s.items.len(), 3);
        for it in &s.items {
            assert_eq!(it.sticker.shape(), &[3, MASK_SIZE, MASK_SIZE]);
            assert!(it.mask.data().iter().chain(it.sticker.data().iter()).all(|v| (0.0..=1.0).contains(v)));
        }
    }
    let again = craft_stickers(&g, 3, 4, &anchors).unwrap();
    assert_eq!(again[1].items[2].sticker.data(), sets[1].items[2].sticker.data());
    assert!(craft_stickers(&g, 1, 0, &anchors[..2]).is_err());
}

#[test]
fn dodging_lowers_the_attacker_score() {
    let (f, c) = (frs(2), corpus());
    let a = assets();
    let spec = AttackSpec::dodging(0);
    let cfg = TrainConfig {
        alpha: 1e3,
        lr: 1e-2,
        augment: false,
        critic_steps: 1,
        batch_size: 2,
        ..config(12)
    };
    let out = train_attack(&f, &a, &spec, &c, &cfg, None).unwrap();
    let adv: Vec<f64> = out.log.iter().filter(|r| r.kind == StepKind::Generator).map(|r| r.adversarial).collect();
    let head = adv[..3].iter().sum::<f64>() / 3.0;
    let tail = adv[adv.len() - 3..].iter().sum::<f64>() / 3.0;
    assert!(tail < head, "adversarial loss went from {head} to {tail}");
}
