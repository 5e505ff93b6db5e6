use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;
use tactilekit::contact::{estimate_contacts, SegmentOptions, ThresholdPolicy};
use tactilekit::numerics::Budget;
use tactilekit::registry::{self, default_cache_dir, FreezePolicy, RegistryIndex, Task};
use tactilekit::sensors::{lookup_profile, Frame, FrameSource, ImageDirectory, SequenceFile};
use tactilekit::slipdetect::{self, SlipArch, SlipDataset, SlipDetector, SlipTrainConfig, SplitMode};
use tactilekit::synthdata::{gen_dataset, DatasetKind, GenOptions, LightingMode};
use tactilekit::touchdetect::{self, Modality, SensorBinding, TouchDataset, TouchDetector, TrainConfig};
use tactilekit::Error;

use crate::args::*;
use crate::bench::bench_touch;
use crate::report::RunReport;

/// Settings every command sees.
pub struct RunContext {
    pub seed: u64,
    pub workers: usize,
    pub cache_dir: PathBuf,
    pub report: Option<PathBuf>,
}

impl RunContext {
    pub fn from_cli(cli: &Cli) -> Self {
        RunContext {
            seed: cli.seed,
            workers: cli.workers as usize,
            cache_dir: cli.cache_dir.clone().unwrap_or_else(default_cache_dir),
            report: cli.report.clone(),
        }
    }

    fn emit(&self, report: &RunReport, out: &mut dyn Write) -> Result<()> {
        writeln!(out, "{}", report.to_json()?)?;
        if let Some(path) = &self.report {
            report.write(path)?;
        }
        Ok(())
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let ctx = RunContext::from_cli(cli);
    match &cli.command {
        Command::Gen(a) => gen(&ctx, a, out),
        Command::Train(a) => match a.task {
            TaskArg::Touch => train_touch(&ctx, a, out),
            TaskArg::Slip => train_slip(&ctx, a, out),
        },
        Command::Crossval(a) => crossval(&ctx, a, out),
        Command::Ablate(a) => ablate(&ctx, a, out),
        Command::Finetune(a) => finetune(&ctx, a, out),
        Command::Infer(a) => infer(&ctx, a, out),
        Command::Contacts(a) => contacts(&ctx, a, out),
        Command::Bench(a) => bench(&ctx, a, out),
        Command::Registry(r) => registry_cmd(&ctx, r, out),
    }
}

fn gen(ctx: &RunContext, a: &GenArgs, out: &mut dyn Write) -> Result<()> {
    let kind = match a.kind {
        TaskArg::Touch => DatasetKind::Touch,
        TaskArg::Slip => DatasetKind::Slip,
    };
    let default_per_class = match kind {
        DatasetKind::Touch => 500,
        DatasetKind::Slip => 10,
    };
    let opts = GenOptions {
        profiles: a.profiles.clone(),
        per_class: a.per_class.unwrap_or(default_per_class) as usize,
        serials: a.serials as usize,
        objects: a.objects as usize,
        length: a.length as usize,
        lighting: if a.mono { LightingMode::Mono } else { LightingMode::Rgb },
        seed: ctx.seed,
        workers: ctx.workers,
    };
    let start = Instant::now();
    let summary = gen_dataset(kind, &a.out, &opts)?;
    let mut report = RunReport::new("gen", ctx.seed, &opts)?;
    report.metrics = json!({ "kind": kind, "samples": summary.samples, "positives": summary.positives });
    report.timings = json!({ "wall_ms": ms(start.elapsed()) });
    report.artifacts.push(summary.manifest.display().to_string());
    report
        .artifacts
        .extend(summary.profile_manifests.iter().map(|p| p.display().to_string()));
    ctx.emit(&report, out)
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn budget(b: &BudgetArgs, default_steps: u64) -> Budget {
    match (b.steps, b.seconds) {
        (Some(s), _) => Budget::Steps(s),
        (None, Some(sec)) => Budget::WallClock(Duration::from_secs_f64(sec)),
        (None, None) => Budget::Steps(default_steps),
    }
}

fn touch_config(ctx: &RunContext, b: &BudgetArgs, input_size: usize, validation_fraction: f64, k: usize) -> Result<TrainConfig> {
    Ok(TrainConfig {
        budget: budget(b, 2000),
        batch_size: b.batch_size as usize,
        learning_rate: b.lr,
        seed: ctx.seed,
        validation_fraction,
        folds: k,
        input_size: (input_size, input_size),
    })
}

fn modality(arg: ModalityArg, dataset: &TouchDataset) -> Modality {
    match arg {
        ModalityArg::WithReference => Modality::WithReference,
        ModalityArg::NoReference => Modality::NoReference,
        ModalityArg::Auto if dataset.all_have_references() => Modality::WithReference,
        ModalityArg::Auto => Modality::NoReference,
    }
}

fn load_touch(path: &Path) -> Result<TouchDataset> {
    TouchDataset::load_manifest(path).with_context(|| format!("loading touch dataset {}", path.display()))
}

fn train_touch(ctx: &RunContext, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let dataset = load_touch(&a.dataset)?;
    let config = touch_config(ctx, &a.budget, a.input_size.unwrap_or(64), a.validation_fraction, 5)?;
    let modality = modality(a.modality, &dataset);
    let (detector, train_report) = if dataset.profiles().len() > 1 {
        touchdetect::train_joint(&[dataset], &config, modality)?
    } else {
        touchdetect::train(&dataset, &config, modality)?
    };
    let digest = detector.save(&a.out)?;
    let mut report = RunReport::new(
        "train",
        ctx.seed,
        json!({ "task": "touch", "dataset": a.dataset, "modality": modality.as_str(), "train": config }),
    )?;
    report.metrics = json!({
        "validation_accuracy": train_report.validation_accuracy,
        "per_profile_accuracy": train_report.per_profile_accuracy,
        "steps": train_report.steps,
        "train_samples": train_report.train_samples,
        "validation_samples": train_report.validation_samples,
        "epochs": train_report.epochs,
        "digest": digest,
    });
    report.timings = json!({ "wall_ms": train_report.wall_ms });
    report.artifacts.push(a.out.display().to_string());
    ctx.emit(&report, out)
}

fn train_slip(ctx: &RunContext, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let dataset = SlipDataset::load_manifest(&a.dataset)
        .with_context(|| format!("loading slip dataset {}", a.dataset.display()))?;
    let size = a.input_size.unwrap_or(slipdetect::SLIP_INPUT_SIZE);
    let config = SlipTrainConfig {
        budget: budget(&a.budget, 600),
        batch_size: a.budget.batch_size as usize,
        learning_rate: a.budget.lr,
        seed: ctx.seed,
        input_size: (size, size),
    };
    let arch = match a.arch {
        ArchArg::Frames2d => SlipArch::Frames2D,
        ArchArg::Conv3d => SlipArch::Conv3D,
    };
    let split = match a.split {
        SplitArg::BySequence => SplitMode::by_sequence(ctx.seed),
        SplitArg::ByObject => SplitMode::by_object(ctx.seed),
    };
    let (detector, slip_report) = slipdetect::train(&dataset, arch, a.window, split, &config)?;
    let digest = detector.save(&a.out)?;
    let mut report = RunReport::new(
        "train",
        ctx.seed,
        json!({ "task": "slip", "dataset": a.dataset, "arch": arch, "window": a.window, "split": split, "train": config }),
    )?;
    report.metrics = json!({
        "test_accuracy": slip_report.test_accuracy,
        "train_windows": slip_report.train_windows,
        "test_windows": slip_report.test_windows,
        "steps": slip_report.steps,
        "epochs": slip_report.epochs,
        "digest": digest,
    });
    report.timings = json!({ "wall_ms": slip_report.wall_ms });
    report.artifacts.push(a.out.display().to_string());
    ctx.emit(&report, out)
}

fn crossval(ctx: &RunContext, a: &CrossvalArgs, out: &mut dyn Write) -> Result<()> {
    let dataset = load_touch(&a.dataset)?;
    let config = touch_config(ctx, &a.budget, a.input_size, 0.2, a.k)?;
    let modality = modality(a.modality, &dataset);
    let cv = touchdetect::cross_validate(&dataset, &config, modality)?;
    let mut report = RunReport::new(
        "crossval",
        ctx.seed,
        json!({ "task": "touch", "dataset": a.dataset, "modality": modality.as_str(), "train": config }),
    )?;
    report.metrics = json!({ "mean": cv.mean, "std": cv.std, "folds": cv.folds, "fold_sizes": cv.fold_sizes });
    report.timings = json!({ "wall_ms": cv.wall_ms });
    ctx.emit(&report, out)
}

fn ablate(ctx: &RunContext, a: &AblateArgs, out: &mut dyn Write) -> Result<()> {
    let dataset = load_touch(&a.dataset)?;
    let config = touch_config(ctx, &a.budget, a.input_size, 0.2, a.k)?;
    let modality = modality(a.modality, &dataset);
    let seeds = if a.seeds.is_empty() { vec![ctx.seed] } else { a.seeds.clone() };
    let start = Instant::now();
    let points = touchdetect::ablate_dataset_size(&dataset, &a.fractions, &config, modality, &seeds)?;
    let csv_path = a
        .csv
        .clone()
        .or_else(|| ctx.report.as_ref().map(|p| p.with_extension("csv")));
    let mut report = RunReport::new(
        "ablate",
        ctx.seed,
        json!({ "task": "touch", "dataset": a.dataset, "fractions": a.fractions, "seeds": seeds, "modality": modality.as_str(), "train": config }),
    )?;
    report.metrics = json!({ "curve": points });
    report.timings = json!({ "wall_ms": ms(start.elapsed()) });
    if let Some(p) = csv_path {
        std::fs::write(&p, touchdetect::ablation_csv(&points)).with_context(|| format!("writing {}", p.display()))?;
        report.artifacts.push(p.display().to_string());
    }
    ctx.emit(&report, out)
}

fn finetune(ctx: &RunContext, a: &FinetuneArgs, out: &mut dyn Write) -> Result<()> {
    let policy: FreezePolicy = a.freeze.parse()?;
    let base = TouchDetector::load(&a.model)?;
    let dataset = load_touch(&a.dataset)?;
    let (h, _) = base.input_size();
    let config = touch_config(ctx, &a.budget, h, a.validation_fraction, 5)?;
    let (tuned, ft) = touchdetect::fine_tune(&base, &dataset, &config, policy)?;
    let digest = tuned.save(&a.out)?;
    let mut report = RunReport::new(
        "finetune",
        ctx.seed,
        json!({ "model": a.model, "dataset": a.dataset, "freeze": policy.to_string(), "train": config }),
    )?;
    report.metrics = json!({
        "validation_accuracy": ft.train.validation_accuracy,
        "per_profile_accuracy": ft.train.per_profile_accuracy,
        "trainable_units": ft.trainable_units,
        "changed": ft.changed,
        "steps": ft.train.steps,
        "digest": digest,
    });
    report.timings = json!({ "wall_ms": ft.train.wall_ms });
    report.artifacts.push(a.out.display().to_string());
    ctx.emit(&report, out)
}

fn requested_task(t: TaskArg) -> Task {
    match t {
        TaskArg::Touch => Task::TouchDetect,
        TaskArg::Slip => Task::SlipDetect,
    }
}

fn infer(_ctx: &RunContext, a: &InferArgs, out: &mut dyn Write) -> Result<()> {
    let meta = registry::inspect(&a.model)?;
    let task = requested_task(a.task);
    if meta.task != task {
        return Err(Error::TaskMismatch {
            model: meta.task.to_string(),
            requested: task.to_string(),
        }
        .into());
    }
    match task {
        Task::TouchDetect => {
            let det = TouchDetector::load(&a.model)?;
            let profile = match (&a.profile, det.binding()) {
                (Some(p), _) => p.clone(),
                (None, SensorBinding::Single(p)) => p.clone(),
                (None, SensorBinding::Joint(ps)) => bail!("joint model over {ps:?}: pass --profile"),
            };
            let profile = lookup_profile(&profile)?;
            let reference = a
                .reference
                .as_ref()
                .map(|p| Frame::load_png(p, profile.clone()))
                .transpose()?;
            for input in &a.inputs {
                let frame = Frame::load_png(input, profile.clone())?;
                let d = det.is_touched(&frame, reference.as_ref())?;
                let line = json!({ "input": input, "decision": d.touching, "certainty": d.certainty });
                writeln!(out, "{line}")?;
            }
        }
        Task::SlipDetect => {
            let det = SlipDetector::load(&a.model)?;
            let profile = lookup_profile(a.profile.as_deref().unwrap_or(det.profile()))?;
            for input in &a.inputs {
                let frames = if input.is_dir() {
                    let mut src = ImageDirectory::open(input, profile.clone())?;
                    let mut frames = Vec::new();
                    while let Some(f) = src.next_frame()? {
                        frames.push(f);
                    }
                    frames
                } else {
                    SequenceFile::open(input)?.read_all()?
                };
                let d = det.is_slipping(&frames)?;
                let line = json!({ "input": input, "decision": d.slipping, "certainty": d.certainty });
                writeln!(out, "{line}")?;
            }
        }
    }
    Ok(())
}

fn contacts(ctx: &RunContext, a: &ContactsArgs, out: &mut dyn Write) -> Result<()> {
    let policy = match a.threshold.as_str() {
        "otsu" => ThresholdPolicy::Otsu,
        v => {
            let t: f32 = v.parse().map_err(|_| anyhow!("threshold must be `otsu` or a number, got `{v}`"))?;
            ThresholdPolicy::Fixed(t)
        }
    };
    let profile = lookup_profile(&a.profile)?;
    let frame = Frame::load_png(&a.frame, profile.clone())?;
    let reference = Frame::load_png(&a.reference, profile)?;
    let options = SegmentOptions {
        policy,
        min_area: a.min_area,
    };
    let est = estimate_contacts(&frame, &reference, &options)?;
    let mut report = RunReport::new("contacts", ctx.seed, json!({ "frame": a.frame, "reference": a.reference, "profile": a.profile, "segment": options }))?;
    report.metrics = serde_json::to_value(&est)?;
    ctx.emit(&report, out)
}

fn bench(ctx: &RunContext, a: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    let det = TouchDetector::load(&a.model)?;
    let latency = bench_touch(&det, a.iterations as usize, a.warmup as usize, ctx.seed)?;
    let mut report = RunReport::new(
        "bench",
        ctx.seed,
        json!({ "model": a.model, "iterations": a.iterations, "warmup": a.warmup, "input": det.network().input_shape() }),
    )?;
    report.timings = serde_json::to_value(&latency)?;
    ctx.emit(&report, out)
}

fn open_index(ctx: &RunContext, index: &Option<PathBuf>) -> Result<RegistryIndex> {
    let path = index.clone().unwrap_or_else(RegistryIndex::bundled_path);
    RegistryIndex::load(&path, ctx.cache_dir.clone()).with_context(|| format!("reading index {}", path.display()))
}

fn registry_cmd(ctx: &RunContext, cmd: &RegistryCommand, out: &mut dyn Write) -> Result<()> {
    match cmd {
        RegistryCommand::List { index } => {
            let index = open_index(ctx, index)?;
            writeln!(out, "{:<16} {:<12} {:>7} {:>10}", "sensor", "task", "version", "size")?;
            for e in index.entries() {
                writeln!(out, "{:<16} {:<12} {:>7} {:>10}", e.sensor, e.task, e.version, e.size)?;
            }
        }
        RegistryCommand::Fetch {
            sensor,
            task,
            version,
            index,
        } => {
            let task: Task = task.parse()?;
            let fetched = open_index(ctx, index)?.fetch(sensor, task, *version)?;
            writeln!(out, "{}", fetched.path.display())?;
            if !fetched.from_cache {
                log::info!("downloaded into {}", ctx.cache_dir.display());
            }
        }
        RegistryCommand::Inspect { path } => {
            let meta = registry::inspect(path)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&meta)?)?;
        }
    }
    Ok(())
}
