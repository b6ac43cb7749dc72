use std::fs;
use std::path::{Path, PathBuf};

use gesturekit::dataset::{
    load_dataset, plan_recordings, render_all, Dataset, DatasetConfig, DatasetWriter, SampleRecord, Split,
};
use gesturekit::dsp::{channel_pgm, save_rsa, load_rsa, RsaBlock, RsaPipeline, RSA_FRAMES};
use gesturekit::eval::{error_breakdown, evaluate, Classifier, EvalReport};
use gesturekit::models::{
    build_network, fit_templates, load_checkpoint, save_checkpoint, Architecture, Checkpoint,
};
use gesturekit::nn::{train, Example, TrainSchedule};
use gesturekit::radar_sim::{noise_std_for_peak_snr, read_cubes, write_cubes, RecordingSynth};
use gesturekit::selftest::run_selftest;
use gesturekit::GestureClass;
use serde::de::DeserializeOwned;

use crate::{Cli, Command, EvalArgs, Failure, GenArgs, InferArgs, ProcessArgs, SplitSel, TrainArgs};

type CmdResult = Result<(), Failure>;

pub fn run(cli: &Cli) -> CmdResult {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Gen(args) => gen(args, seed),
        Command::Process(args) => process(args),
        Command::Train(args) => train_cmd(args, cli.seed),
        Command::Eval(args) => eval_cmd(args),
        Command::Infer(args) => infer(args),
        Command::Selftest => selftest(seed),
    }
}

/// JSON config file; syntax and schema problems are data errors with a byte offset.
fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        let line_start: usize = text.split_inclusive('\n').take(e.line().saturating_sub(1)).map(str::len).sum();
        let offset = line_start + e.column().saturating_sub(1);
        Failure::Data(format!("format error in {} at byte {offset}: {e}", path.display()))
    })
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CmdResult {
    fs::write(path, bytes).map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
}

fn gen(args: &GenArgs, seed: u64) -> CmdResult {
    let mut cfg: DatasetConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => DatasetConfig::default(),
    };
    if let Some(n) = args.per_class {
        cfg.per_class = n;
    }
    if let Some(n) = args.crops {
        cfg.crops = n;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if !(args.val_ratio > 0.0 && args.val_ratio < 1.0) {
        return Err(Failure::Usage(format!("--val-ratio must be in (0, 1), got {}", args.val_ratio)));
    }
    if let Some(path) = &args.raw {
        return gen_raw(&cfg, args.gesture, seed, path);
    }
    let out = args.out.as_ref().expect("clap requires --out without --raw");
    let plans = plan_recordings(&cfg, seed)?;
    let mut writer = DatasetWriter::create(out, &cfg, seed, args.val_ratio)?;
    let chunk = 4 * rayon::current_num_threads();
    for (k, group) in plans.chunks(chunk).enumerate() {
        for record in render_all(&cfg, group)?.iter().flatten() {
            writer.add(record)?;
        }
        log::info!("rendered {}/{} recordings", (k * chunk + group.len()), plans.len());
    }
    let manifest = writer.finish()?;
    let val = manifest.samples.iter().filter(|s| s.split == Split::Val).count();
    println!(
        "wrote {} samples ({} train, {val} val) from {} recordings to {}",
        manifest.samples.len(),
        manifest.samples.len() - val,
        plans.len(),
        out.display()
    );
    Ok(())
}

/// One raw recording of the requested class, using the first planned kinematics of that class.
fn gen_raw(cfg: &DatasetConfig, gesture: GestureClass, seed: u64, path: &Path) -> CmdResult {
    let plan = plan_recordings(cfg, seed)?
        .into_iter()
        .find(|p| p.gesture == gesture)
        .expect("every class is planned");
    let mut chirp = cfg.chirp.clone();
    chirp.noise_std = noise_std_for_peak_snr(&chirp, chirp.amplitude, cfg.snr_db);
    // centre the block's motion window inside 128 frames
    let mut params = plan.params;
    let lead = (cfg.block_frames - RSA_FRAMES) as f64 / 2.0 * chirp.frame_period;
    params.onset -= lead;
    let cubes: Vec<_> = RecordingSynth::new(&chirp, gesture, &params, plan.body, RSA_FRAMES, plan.seed ^ 0x5eed)?.collect();
    write_cubes(path, &cubes)?;
    println!("wrote {} raw {gesture} frames to {}", cubes.len(), path.display());
    Ok(())
}

fn process(args: &ProcessArgs) -> CmdResult {
    let cubes = read_cubes(&args.input)?;
    if cubes.len() < args.start + RSA_FRAMES {
        return Err(Failure::Data(format!(
            "{} holds {} frames; a window starting at {} needs {}",
            args.input.display(),
            cubes.len(),
            args.start,
            args.start + RSA_FRAMES
        )));
    }
    let chirp = gesturekit::radar_sim::ChirpConfig::default();
    if let Some(c) = cubes.iter().find(|c| !c.matches(&chirp)) {
        return Err(Failure::Data(format!(
            "{}: frame shape {:?} does not match the default chirp configuration",
            args.input.display(),
            c.shape()
        )));
    }
    let frames = RsaPipeline::new(&chirp)?.process_recording(&cubes)?;
    let block = RsaBlock::from_frames(&frames);
    let image = gesturekit::dataset::crop_block(&block, args.start, 0, args.label)?;
    save_rsa(&args.output, &image)?;
    if let Some(pgm) = &args.pgm {
        write_file(pgm, channel_pgm(&image, args.channel as usize)?)?;
    }
    println!("wrote {}", args.output.display());
    Ok(())
}

fn examples(ds: &Dataset, split: Split) -> Vec<Example<'_>> {
    ds.split(split)
        .map(|r| Example {
            input: r.image.as_slice(),
            label: r.label.index(),
        })
        .collect()
}

fn samples<'a>(records: &[&'a SampleRecord]) -> Vec<(&'a [f32], GestureClass)> {
    records.iter().map(|r| (r.image.as_slice(), r.label)).collect()
}

fn train_cmd(args: &TrainArgs, seed: Option<u64>) -> CmdResult {
    let mut schedule: TrainSchedule = match &args.config {
        Some(p) => read_json(p)?,
        None => TrainSchedule::default(),
    };
    if let Some(s) = seed {
        schedule.seed = s;
    }
    schedule.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let ds = load_dataset(&args.data)?;
    let train_recs: Vec<_> = ds.split(Split::Train).collect();
    let val_recs: Vec<_> = ds.split(Split::Val).collect();
    if train_recs.is_empty() || val_recs.is_empty() {
        return Err(Failure::Data(format!(
            "{} needs both train and val samples ({} train, {} val)",
            args.data.display(),
            train_recs.len(),
            val_recs.len()
        )));
    }
    let ckpt = match args.arch {
        Architecture::Template => {
            let templates = fit_templates(samples(&train_recs))?;
            let report = evaluate(&templates, samples(&val_recs), 64)?;
            println!("template: val accuracy {:.4}", report.average);
            Checkpoint::Template(templates)
        }
        arch => {
            let mut model = build_network::<f32>(arch, schedule.seed)?;
            log::info!("{arch}: {} parameters, {} train / {} val samples", model.param_count(), train_recs.len(), val_recs.len());
            let history = train(&mut model, &examples(&ds, Split::Train), &examples(&ds, Split::Val), &schedule, |_| {})?;
            let kept = history.kept();
            println!(
                "{arch}: kept epoch {} of {}, val loss {:.4}, val accuracy {:.4} ({:?})",
                kept.epoch,
                history.epochs.len(),
                kept.val_loss,
                kept.val_accuracy,
                history.stop
            );
            let history_path = args.history.clone().unwrap_or_else(|| with_suffix(&args.out, ".history.csv"));
            write_file(&history_path, history.to_csv())?;
            Checkpoint::Network(model)
        }
    };
    save_checkpoint(&args.out, &ckpt)?;
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn eval_cmd(args: &EvalArgs) -> CmdResult {
    let ckpt = load_checkpoint(&args.model)?;
    let ds = load_dataset(&args.data)?;
    let recs: Vec<_> = match args.split {
        SplitSel::All => ds.records.iter().collect(),
        SplitSel::Only(s) => ds.split(s).collect(),
    };
    if recs.is_empty() {
        return Err(Failure::Data(format!("{} has no samples in the selected split", args.data.display())));
    }
    let report = evaluate(&ckpt, samples(&recs), 32)?;
    write_file(&args.report, report.to_csv())?;
    print_report(&report);
    Ok(())
}

fn print_report(report: &EvalReport) {
    for g in GestureClass::ALL {
        println!("{:<6} {:.4}", g.name(), report.per_class[g.index()]);
    }
    println!("avg    {:.4} over {} samples ({})", report.average, report.n, report.model);
    for c in error_breakdown(report).iter().take(3) {
        log::info!("{} -> {}: {} ({:.1}%)", c.truth, c.predicted, c.count, 100.0 * c.rate);
    }
}

fn infer(args: &InferArgs) -> CmdResult {
    let ckpt = load_checkpoint(&args.model)?;
    let image = load_rsa(&args.input)?;
    let probs = ckpt.predict(image.as_slice())?;
    for g in GestureClass::ALL {
        println!("{} {:.6}", g.name(), probs[g.index()]);
    }
    let best = gesturekit::nn::argmax(&probs);
    println!("predicted {}", GestureClass::ALL[best]);
    Ok(())
}

fn selftest(seed: u64) -> CmdResult {
    let results = run_selftest(seed);
    for r in &results {
        println!("{r}");
    }
    if results.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Failure::Acceptance)
    }
}
