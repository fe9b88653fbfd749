use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use stickerlab::attack::{
    craft_stickers, parse_log, pretrain_shape_gan, run_attack_to_dir, AttackMode, AttackSpec, AttackTrainer,
    PretrainConfig, RunFiles, ShapeGan, TrainConfig,
};
use stickerlab::config::{apply_kv, parse_kv, to_kv};
use stickerlab::eval::{
    all_combination_ids, craft_and_evaluate, export_stickers, run_sweep, AttackPair, Condition, ExperimentConfig,
    FrameBank, SweepAxis, SweepInputs,
};
use stickerlab::fr::{evaluate_accuracy, train_fr, FaceDataset, FrSystem, FrTrainConfig, Split, SyntheticFaces};
use stickerlab::gan::Generator;
use stickerlab::render::{make_synthetic_asset, sh_constant, FaceAsset};
use stickerlab::saliency::{
    grad_cam, guided_backprop, guided_grad_cam, region_report, score_regions, RegionCombination, SaliencyMap,
};
use stickerlab::shapes::{build_corpus, CorpusConfig, ShapeCorpus};
use stickerlab::tensor::Tensor;

use crate::{AssetVerb, AttackVerb, Cli, Command, CorpusVerb, EvalVerb, ExportVerb, FrVerb, SaliencyVerb, SpecArgs, SweepArgs, TrainArgs};

const RESOLVED: &str = "config.txt";
const DEFAULT_CORPUS_PER_KIND: usize = 200;

struct Ctx {
    seed: Option<u64>,
    overrides: BTreeMap<String, String>,
    out: Option<PathBuf>,
}

impl Ctx {
    fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    /// Defaults, then the config file.
    fn configured<T: Serialize + DeserializeOwned>(&self, base: T) -> Result<T> {
        Ok(apply_kv(&base, &self.overrides)?)
    }
}

fn run_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn resolved_path_for_file(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".config.txt");
    out.with_file_name(name)
}

pub fn run(cli: Cli) -> Result<()> {
    let overrides = match &cli.config {
        Some(p) => parse_kv(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => BTreeMap::new(),
    };
    let ctx = Ctx {
        seed: cli.seed,
        overrides,
        out: cli.out,
    };
    match cli.command {
        Command::Corpus { verb } => corpus(&ctx, verb),
        Command::Asset { verb } => asset(&ctx, verb),
        Command::Fr { verb } => fr(&ctx, verb),
        Command::Saliency { verb } => saliency(&ctx, verb),
        Command::Attack { verb } => attack(&ctx, verb),
        Command::Eval { verb } => eval(&ctx, verb),
        Command::Export { verb } => export(&ctx, verb),
    }
}

fn corpus(ctx: &Ctx, verb: CorpusVerb) -> Result<()> {
    let CorpusVerb::Build { per_kind } = verb;
    let mut cfg: CorpusConfig = ctx.configured(CorpusConfig::default())?;
    if let Some(n) = per_kind {
        cfg.per_kind = n;
    }
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    let out = ctx.out_or("shapes.bin");
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        run_dir(parent)?;
    }
    let corpus = build_corpus(&cfg)?;
    corpus.save(&out)?;
    write(&resolved_path_for_file(&out), &to_kv(&cfg))?;
    println!("{} masks written to {}", corpus.len(), out.display());
    Ok(())
}

fn asset(ctx: &Ctx, verb: AssetVerb) -> Result<()> {
    match verb {
        AssetVerb::Make {
            identity,
            yaw,
            pitch,
            brightness,
            identities,
            per_identity,
        } => {
            if identities.is_some() || per_identity.is_some() {
                let mut faces: SyntheticFaces = ctx.configured(SyntheticFaces::default())?;
                if let Some(n) = identities {
                    faces.identities = n;
                }
                if let Some(n) = per_identity {
                    faces.per_identity = n;
                }
                if let Some(s) = ctx.seed {
                    faces.seed = s;
                }
                let out = ctx.out_or("dataset");
                let ds = FaceDataset::synthetic(&faces)?;
                ds.save(&out)?;
                write(&out.join(RESOLVED), &to_kv(&faces))?;
                println!("{} images of {} identities written to {}", ds.samples.len(), faces.identities, out.display());
                return Ok(());
            }
            let seed = stickerlab::fr::identity_seed(ctx.seed.unwrap_or(0), identity);
            let mut a = make_synthetic_asset(seed, yaw, pitch, &sh_constant([brightness; 3]))?;
            a.label = format!("id-{identity:02}");
            let out = ctx.out_or("asset");
            a.save(&out)?;
            let resolved = format!(
                "identity = {identity}\nyaw = {yaw}\npitch = {pitch}\nbrightness = {brightness}\nseed = {}\n",
                ctx.seed.unwrap_or(0)
            );
            write(&out.join(RESOLVED), &resolved)?;
            println!("asset written to {}", out.display());
            Ok(())
        }
        AssetVerb::Validate { dir } => {
            let a = FaceAsset::load(&dir)?;
            match a.validate() {
                Ok(()) => {
                    println!("ok: {} ({}x{}, {} triangles)", dir.display(), a.size, a.size, a.triangles.len());
                    Ok(())
                }
                Err((field, reason)) => bail!("{}: {field}: {reason}", dir.display()),
            }
        }
    }
}

fn load_dataset(dir: &Path) -> Result<FaceDataset> {
    FaceDataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn load_frs(path: &Path) -> Result<FrSystem> {
    FrSystem::load(path).with_context(|| format!("loading recognizer {}", path.display()))
}

fn fr(ctx: &Ctx, verb: FrVerb) -> Result<()> {
    match verb {
        FrVerb::Train { dataset, extractor, epochs } => {
            let mut cfg: FrTrainConfig = ctx.configured(FrTrainConfig::default())?;
            if let Some(e) = extractor {
                cfg.extractor = e.parse()?;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(s) = ctx.seed {
                cfg.seed = s;
            }
            let out = ctx.out_or("frs");
            run_dir(&out)?;
            write(&out.join(RESOLVED), &format!("dataset = {}\n{}", dataset.display(), to_kv(&cfg)))?;
            let ds = load_dataset(&dataset)?;
            let (frs, report) = train_fr(&ds, &cfg)?;
            frs.save(&out.join("frs.ckpt"))?;
            let mut log = String::from("epoch\tloss\n");
            for (i, l) in report.epoch_loss.iter().enumerate() {
                log.push_str(&format!("{}\t{l:e}\n", i + 1));
            }
            write(&out.join("train.log"), &log)?;
            let summary = format!(
                "train_accuracy = {}\ntest_accuracy = {}\n",
                report.train_accuracy, report.test_accuracy
            );
            write(&out.join("report.txt"), &summary)?;
            print!("{summary}");
            Ok(())
        }
        FrVerb::Eval { frs, dataset, split } => {
            let frs = load_frs(&frs)?;
            let ds = load_dataset(&dataset)?;
            let split: Split = split.parse()?;
            let acc = evaluate_accuracy(&frs, &ds, split)?;
            let text = format!("split = {split}\naccuracy = {acc}\n");
            if let Some(out) = &ctx.out {
                run_dir(out)?;
                write(&out.join("report.txt"), &text)?;
            }
            print!("{text}");
            Ok(())
        }
    }
}

fn label_of(names: &[String], s: &str) -> Result<usize> {
    if let Some(i) = names.iter().position(|n| n == s) {
        return Ok(i);
    }
    match s.parse::<usize>() {
        Ok(i) if i < names.len() => Ok(i),
        _ => bail!("unknown label '{s}' (index below {} or one of the class names)", names.len()),
    }
}

fn asset_image(a: &FaceAsset) -> Tensor {
    Tensor::new(a.image_planar(), &[3, a.size, a.size])
}

fn saliency(ctx: &Ctx, verb: SaliencyVerb) -> Result<()> {
    match verb {
        SaliencyVerb::Map {
            frs,
            asset,
            class,
            method,
        } => {
            let frs = load_frs(&frs)?;
            let a = FaceAsset::load(&asset)?;
            let class = label_of(frs.class_names(), class.as_deref().unwrap_or(&a.label))?;
            let img = asset_image(&a);
            let map = match method.as_str() {
                "grad-cam" => grad_cam(&frs, &img, class)?,
                "guided-grad-cam" => guided_grad_cam(&frs, &img, class)?,
                "guided" => {
                    let g = guided_backprop(&frs, &img, class)?;
                    let n = a.size * a.size;
                    let d = g.data();
                    let mut v: Vec<f64> = (0..n)
                        .map(|p| (0..3).map(|c| d[c * n + p] * d[c * n + p]).sum::<f64>().sqrt())
                        .collect();
                    let max = v.iter().copied().fold(0.0, f64::max);
                    if max > 0.0 {
                        v.iter_mut().for_each(|x| *x /= max);
                    }
                    SaliencyMap {
                        height: a.size,
                        width: a.size,
                        values: v,
                    }
                }
                other => bail!("unknown method '{other}' (grad-cam, guided, guided-grad-cam)"),
            };
            let out = ctx.out_or("saliency");
            run_dir(&out)?;
            map.save_png(&out.join(format!("{method}-{class}.png")))?;
            write(
                &out.join(RESOLVED),
                &format!("asset = {}\nclass = {class}\nmethod = {method}\n", asset.display()),
            )?;
            println!("map written to {}", out.display());
            Ok(())
        }
        SaliencyVerb::Regions {
            frs,
            dataset,
            label,
            limit,
        } => {
            let frs = load_frs(&frs)?;
            let ds = load_dataset(&dataset)?;
            let label = label_of(&ds.class_names, &label)?;
            let idx: Vec<usize> = ds.of_label(label, Split::Train).into_iter().take(limit.max(1)).collect();
            let mut totals = BTreeMap::new();
            for &i in &idx {
                let a = &ds.samples[i].asset;
                let map = guided_grad_cam(&frs, &asset_image(a), label)?;
                for (name, s) in score_regions(&[map], a)? {
                    *totals.entry(name).or_insert(0.0) += s / idx.len() as f64;
                }
            }
            let scores: Vec<_> = totals.into_iter().collect();
            let report = region_report(&scores);
            let out = ctx.out_or("regions");
            run_dir(&out)?;
            write(&out.join("regions.txt"), &report)?;
            write(
                &out.join(RESOLVED),
                &format!("dataset = {}\nlabel = {label}\nimages = {}\n", dataset.display(), idx.len()),
            )?;
            print!("{report}");
            Ok(())
        }
    }
}

fn spec_from(args: &SpecArgs, names: &[String]) -> Result<AttackSpec> {
    let mode: AttackMode = args.mode.parse()?;
    let attacker = label_of(names, &args.attacker)?;
    let combination = RegionCombination::by_id(args.combo)?;
    let spec = match mode {
        AttackMode::Dodging => AttackSpec::dodging(attacker),
        AttackMode::Impersonating => {
            let Some(t) = &args.target else {
                bail!("impersonation needs --target");
            };
            AttackSpec::impersonating(attacker, label_of(names, t)?)
        }
    }
    .with_combination(combination);
    spec.validate(names.len())?;
    Ok(spec)
}

fn train_config(ctx: &Ctx, args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = ctx.configured(TrainConfig::default())?;
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(a) = &args.arch {
        cfg.arch = a.clone();
    }
    if let Some(m) = args.batch_size {
        cfg.batch_size = m;
    }
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_or_build_corpus(path: Option<&Path>, seed: u64) -> Result<ShapeCorpus> {
    match path {
        Some(p) => ShapeCorpus::load(p).with_context(|| format!("loading corpus {}", p.display())),
        None => Ok(build_corpus(&CorpusConfig {
            per_kind: DEFAULT_CORPUS_PER_KIND,
            seed,
            ..CorpusConfig::default()
        })?),
    }
}

fn load_pretrained(path: Option<&Path>) -> Result<Option<ShapeGan>> {
    path.map(|p| ShapeGan::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()
}

fn attacker_assets(ds: &FaceDataset, label: usize, split: Split, size: Option<usize>) -> Result<Vec<FaceAsset>> {
    ds.of_label(label, split)
        .into_iter()
        .map(|i| {
            let a = &ds.samples[i].asset;
            Ok(match size {
                Some(s) => a.with_slot_size(s)?,
                None => a.clone(),
            })
        })
        .collect()
}

fn spec_kv(spec: &AttackSpec, size: Option<usize>) -> String {
    format!(
        "mode = {}\nattacker = {}\ntarget = {}\ncombination = {}\nslot_size = {}\n",
        spec.mode,
        spec.attacker,
        spec.target.map_or("-".into(), |t| t.to_string()),
        spec.combination.id,
        size.map_or("asset".into(), |s| s.to_string())
    )
}

fn attack(ctx: &Ctx, verb: AttackVerb) -> Result<()> {
    match verb {
        AttackVerb::Pretrain { corpus, epochs, arch } => {
            let mut cfg: PretrainConfig = ctx.configured(PretrainConfig::default())?;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(a) = arch {
                cfg.arch = a;
            }
            if let Some(s) = ctx.seed {
                cfg.seed = s;
            }
            let out = ctx.out_or("pretrain");
            run_dir(&out)?;
            let corpus_line = corpus.as_ref().map_or("built".into(), |p| p.display().to_string());
            write(&out.join(RESOLVED), &format!("corpus = {corpus_line}\n{}", to_kv(&cfg)))?;
            let c = load_or_build_corpus(corpus.as_deref(), cfg.seed)?;
            let (gan, log) = pretrain_shape_gan(&c, &cfg)?;
            gan.save(&out.join("shape-gan.ckpt"))?;
            write(&out.join("train.log"), &stickerlab::attack::format_log(&log))?;
            println!("pretrained {} epochs into {}", cfg.epochs, out.display());
            Ok(())
        }
        AttackVerb::Train {
            frs,
            dataset,
            spec,
            train,
            size,
            resume,
        } => {
            let cfg = train_config(ctx, &train)?;
            let frs = load_frs(&frs)?;
            let ds = load_dataset(&dataset)?;
            let spec = spec_from(&spec, &ds.class_names)?;
            let out = ctx.out_or("attack");
            run_dir(&out)?;
            let resolved = format!(
                "frs_classes = {}\ndataset = {}\n{}{}",
                ds.class_names.len(),
                dataset.display(),
                spec_kv(&spec, size),
                to_kv(&cfg)
            );
            write(&out.join(RESOLVED), &resolved)?;
            let corpus = load_or_build_corpus(train.corpus.as_deref(), cfg.seed)?;
            let pretrained = load_pretrained(train.pretrained.as_deref())?;
            let assets = attacker_assets(&ds, spec.attacker, Split::Train, size)?;
            let mut t = AttackTrainer::new(&frs, &assets, &spec, &corpus, &cfg, pretrained.as_ref())?;
            let state = if resume {
                let s = RunFiles::new(&out).latest_state();
                if s.is_none() {
                    bail!("no state checkpoint to resume in {}", out.display());
                }
                s
            } else {
                None
            };
            run_attack_to_dir(&mut t, &out, state.as_deref(), None)?;
            let last = parse_log(&std::fs::read_to_string(RunFiles::new(&out).log())?)?;
            if let Some(r) = last.iter().rev().find(|r| r.kind == stickerlab::attack::StepKind::Generator) {
                println!(
                    "epoch {}: L_G {:.4} (shape {:.4}, adversarial {:.4}, tv {:.2})",
                    r.epoch, r.generator, r.shape, r.adversarial, r.tv
                );
            }
            Ok(())
        }
        AttackVerb::Craft {
            gen,
            asset,
            combo,
            count,
        } => {
            let g = Generator::load(&gen)?;
            let a = FaceAsset::load(&asset)?;
            let anchors = RegionCombination::by_id(combo)?.anchors(&a)?;
            let seed = ctx.seed.unwrap_or(0);
            let sets = craft_stickers(&g, count, seed, &anchors)?;
            let out = ctx.out_or("stickers");
            run_dir(&out)?;
            for (i, s) in sets.iter().enumerate() {
                export_stickers(s, &out.join(format!("set-{i:03}")), stickerlab::eval::MASK_THRESHOLD)?;
            }
            write(
                &out.join(RESOLVED),
                &format!("generator = {}\nasset = {}\ncombination = {combo}\ncount = {count}\nseed = {seed}\n", gen.display(), asset.display()),
            )?;
            println!("{count} sticker sets written to {}", out.display());
            Ok(())
        }
    }
}

fn is_dataset_dir(dir: &Path) -> bool {
    std::fs::read_to_string(dir.join("manifest.txt"))
        .ok()
        .and_then(|t| t.lines().find(|l| !l.trim().is_empty()).map(|l| l.contains('\t')))
        .unwrap_or(false)
}

fn assets_in(dir: &Path) -> Result<Vec<FaceAsset>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.txt").exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("{} holds no asset directories", dir.display());
    }
    dirs.iter().map(|d| Ok(FaceAsset::load(d)?)).collect()
}

fn sweep_config(ctx: &Ctx, args: &SweepArgs, axis: SweepAxis, combo: usize) -> Result<ExperimentConfig> {
    let pairs = args.pairs.iter().map(|p| p.parse()).collect::<Result<Vec<AttackPair>, _>>()?;
    let mut cfg = ExperimentConfig::new(axis, pairs);
    cfg.repetitions = args.repetitions;
    cfg.craft_count = args.count;
    cfg.combination = combo;
    cfg.train = train_config(ctx, &args.train)?;
    Ok(cfg)
}

fn run_sweep_cmd(ctx: &Ctx, args: &SweepArgs, cfg: ExperimentConfig, default_out: &str) -> Result<()> {
    let frs = load_frs(&args.frs)?;
    let ds = load_dataset(&args.dataset)?;
    let faces: Option<SyntheticFaces> = std::fs::read_to_string(args.dataset.join(RESOLVED))
        .ok()
        .and_then(|t| parse_kv(&t).ok())
        .and_then(|kv| apply_kv(&SyntheticFaces::default(), &kv).ok());
    let corpus = load_or_build_corpus(args.train.corpus.as_deref(), cfg.train.seed)?;
    let pretrained = load_pretrained(args.train.pretrained.as_deref())?;
    let out = ctx.out_or(default_out);
    run_dir(&out)?;
    write(&out.join(RESOLVED), &format!("dataset = {}\n{}", args.dataset.display(), serde_json::to_string_pretty(&cfg)?))?;
    let inputs = SweepInputs {
        frs: &frs,
        dataset: &ds,
        corpus: &corpus,
        pretrained: pretrained.as_ref(),
        faces: faces.as_ref(),
    };
    let table = run_sweep(&inputs, &cfg, &out)?;
    write(&out.join("table.tsv"), &table.to_tsv())?;
    write(&out.join("table.json"), &serde_json::to_string_pretty(&table)?)?;
    let text = table.to_text();
    write(&out.join("table.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn eval(ctx: &Ctx, verb: EvalVerb) -> Result<()> {
    match verb {
        EvalVerb::Run {
            frs,
            gen,
            frames,
            spec,
            count,
            size,
        } => {
            let frs = load_frs(&frs)?;
            let g = Generator::load(&gen)?;
            let spec = spec_from(&spec, frs.class_names())?;
            let (selection, heldout) = if is_dataset_dir(&frames) {
                let ds = load_dataset(&frames)?;
                (
                    attacker_assets(&ds, spec.attacker, Split::Train, size)?,
                    attacker_assets(&ds, spec.attacker, Split::Test, size)?,
                )
            } else {
                let all: Vec<FaceAsset> = assets_in(&frames)?
                    .into_iter()
                    .map(|a| Ok(match size {
                        Some(s) => a.with_slot_size(s)?,
                        None => a,
                    }))
                    .collect::<Result<_>>()?;
                (all.clone(), all)
            };
            let anchors = spec.combination.anchors(&heldout[0])?;
            let seed = ctx.seed.unwrap_or(0);
            let ev = craft_and_evaluate(
                &frs,
                &g,
                &anchors,
                &FrameBank::new(selection)?,
                &FrameBank::new(heldout)?,
                &spec,
                count,
                seed,
                None,
            )?;
            let out = ctx.out_or("eval");
            run_dir(&out)?;
            write(
                &out.join(RESOLVED),
                &format!(
                    "generator = {}\nframes = {}\ncount = {count}\nseed = {seed}\n{}",
                    gen.display(),
                    frames.display(),
                    spec_kv(&spec, size)
                ),
            )?;
            write(&out.join("report.json"), &serde_json::to_string_pretty(&ev)?)?;
            let text = format!("chosen set {} of {count}\n{}", ev.chosen, ev.report.to_text());
            write(&out.join("report.txt"), &text)?;
            print!("{text}");
            Ok(())
        }
        EvalVerb::SweepCombos { sweep, combos } => {
            let ids = if combos.is_empty() { all_combination_ids() } else { combos };
            let cfg = sweep_config(ctx, &sweep, SweepAxis::Combinations(ids), stickerlab::attack::DEFAULT_COMBINATION)?;
            run_sweep_cmd(ctx, &sweep, cfg, "sweep-combos")
        }
        EvalVerb::SweepSizes { sweep, sizes, combo } => {
            let cfg = sweep_config(ctx, &sweep, SweepAxis::Sizes(sizes), combo)?;
            run_sweep_cmd(ctx, &sweep, cfg, "sweep-sizes")
        }
        EvalVerb::SweepConditions {
            sweep,
            condition,
            values,
            frames_per_value,
            combo,
        } => {
            let condition: Condition = condition.parse()?;
            let mut cfg = sweep_config(ctx, &sweep, SweepAxis::Conditions { condition, values }, combo)?;
            cfg.condition_frames = frames_per_value;
            run_sweep_cmd(ctx, &sweep, cfg, "sweep-conditions")
        }
    }
}

fn export(ctx: &Ctx, verb: ExportVerb) -> Result<()> {
    let ExportVerb::Stickers {
        gen,
        asset,
        combo,
        index,
        threshold,
    } = verb;
    if !(0.0..1.0).contains(&threshold) {
        bail!("threshold must lie in [0, 1)");
    }
    let g = Generator::load(&gen)?;
    let a = FaceAsset::load(&asset)?;
    let anchors = RegionCombination::by_id(combo)?.anchors(&a)?;
    let seed = ctx.seed.unwrap_or(0);
    let sets = craft_stickers(&g, index + 1, seed, &anchors)?;
    let out = ctx.out_or("export");
    let paths = export_stickers(&sets[index], &out, threshold)?;
    write(
        &out.join(RESOLVED),
        &format!(
            "generator = {}\nasset = {}\ncombination = {combo}\nindex = {index}\nthreshold = {threshold}\nseed = {seed}\n",
            gen.display(),
            asset.display()
        ),
    )?;
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}
