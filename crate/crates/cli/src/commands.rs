use std::collections::HashMap;
use std::path::{Path, PathBuf};

use longiprog::checkpoint::Checkpoint;
use longiprog::datagen::{generate_dataset, read_manifest, split_dataset, Split, VisitSequence, DEFAULT_FRACTIONS};
use longiprog::eval::{delong_test, EvalReport, PairedTest, ScoreSet, ScoredEye};
use longiprog::exec::Execution;
use longiprog::model::{cam, ClassActivation};
use longiprog::preprocess::{filter_eligible, RawImage};
use longiprog::report::{roc_csv, roc_svg};
use longiprog::train::{load_examples, predict_all, train, Example, TrainConfig, TrainMeta};
use longiprog::{Error, Result};
use serde::Serialize;

use crate::config::ConfigFile;
use crate::{CamArgs, CompareArgs, EvalArgs, GenDataArgs, TrainArgs};

/// Observed visits an eligible sequence must have; models use the last `T`.
pub const OBSERVED_VISITS: usize = 3;

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn gen_data(args: &GenDataArgs, mode: Execution) -> Result<()> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let mut cfg = file.data(args.seed)?;
    if let Some(n) = args.eyes {
        cfg.n_eyes = n;
    }
    if let Some(r) = args.progress_rate {
        cfg.progress_rate = r;
    }
    if let Some(p) = args.image_size {
        cfg.image_size = p;
    }
    cfg.validate()?;
    let summary = generate_dataset(&cfg, &args.out, mode)?;
    println!(
        "generated {} eyes of {} patients: {} progressors ({:.1}%), {} images",
        summary.eyes,
        summary.patients,
        summary.progressors,
        100.0 * summary.progressors as f64 / summary.eyes as f64,
        summary.images
    );
    println!("manifest: {} (split-ready by patient)", summary.manifest.display());
    Ok(())
}

/// Eligible records of a manifest, split by patient under `split_seed`.
fn load_splits(manifest: &Path, split_seed: u64) -> Result<[Vec<VisitSequence>; 3]> {
    let records = read_manifest(manifest)?;
    let total = records.len();
    let (kept, excluded) = filter_eligible(records, OBSERVED_VISITS);
    if !excluded.is_empty() {
        eprintln!("excluded {} of {total} sequences:", excluded.len());
        for ex in &excluded {
            eprintln!("  {}: {}", ex.id, ex.reason);
        }
    }
    split_dataset(&kept, DEFAULT_FRACTIONS, split_seed)
}

fn base_dir(manifest: &Path) -> &Path {
    manifest.parent().unwrap_or(Path::new("."))
}

fn history_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("history.csv")
}

pub fn train_cmd(args: &TrainArgs, mode: Execution) -> Result<()> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let mut cfg: TrainConfig = file.train(args.seed)?;
    if let Some(t) = args.timepoints {
        cfg.timepoints = t;
    }
    if args.no_interval_scaling {
        cfg.interval_scaling = false;
    }
    if args.cam_head {
        cfg.cam_head = true;
    }
    if let Some(e) = args.epochs {
        cfg.max_epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.lr = lr;
    }
    cfg.validate()?;
    let [tr, va, _] = load_splits(&args.manifest, cfg.split_seed)?;
    let dir = base_dir(&args.manifest);
    let tr = load_examples(&tr, dir, cfg.timepoints, &cfg.preprocess, mode)?;
    let va = load_examples(&va, dir, cfg.timepoints, &cfg.preprocess, mode)?;
    eprintln!(
        "training T={} scaling={} on {} eyes, validating on {}",
        cfg.timepoints,
        cfg.interval_scaling,
        tr.len(),
        va.len()
    );
    let outcome = train(&cfg, &tr, &va, mode, |e| {
        if !args.quiet {
            eprintln!(
                "epoch {:>3}  train {:.5}  val {:.5}  lr {:.4e}",
                e.epoch, e.train_loss, e.val_loss, e.lr
            );
        }
    })?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    outcome.checkpoint.save(&args.out)?;
    let history = args.history.clone().unwrap_or_else(|| history_path(&args.out));
    write_text(&history, &outcome.history.to_csv())?;
    println!(
        "best epoch {} of {} (val loss {:.6}); checkpoint {}, history {}",
        outcome.history.best_epoch,
        outcome.history.epochs.len(),
        outcome.history.best_val_loss().unwrap_or(f64::NAN),
        args.out.display(),
        history.display()
    );
    Ok(())
}

/// Checkpoint, its training provenance and the examples of one split.
struct Loaded {
    checkpoint: Checkpoint,
    meta: TrainMeta,
    examples: Vec<Example>,
}

fn load_for_eval(
    ckpt: &Path,
    manifest: &Path,
    split: Split,
    timepoints: Option<usize>,
    mode: Execution,
) -> Result<Loaded> {
    let checkpoint = Checkpoint::load(ckpt)?;
    let meta = TrainMeta::from_checkpoint(&checkpoint)?;
    let t = meta.config.timepoints;
    if let Some(req) = timepoints {
        if req != t {
            return Err(Error::Config(format!(
                "checkpoint {} was trained on {t} timepoint(s) but --timepoints {req} was requested; \
                 evaluate with --timepoints {t} or retrain",
                ckpt.display()
            )));
        }
    }
    let splits = load_splits(manifest, meta.config.split_seed)?;
    let examples = load_examples(
        &splits[split.index()],
        base_dir(manifest),
        t,
        &meta.config.preprocess,
        mode,
    )?;
    Ok(Loaded {
        checkpoint,
        meta,
        examples,
    })
}

#[derive(Serialize)]
struct EvalContext<'a> {
    checkpoint: String,
    manifest: String,
    split: Split,
    bootstrap: usize,
    seed: u64,
    training: &'a TrainMeta,
}

pub fn eval_cmd(args: &EvalArgs, mode: Execution) -> Result<()> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let mut settings = file.eval(args.seed)?;
    if let Some(b) = args.bootstrap {
        settings.bootstrap = b;
    }
    if let Some(s) = &args.split {
        settings.split = s.parse()?;
    }
    let loaded = load_for_eval(&args.ckpt, &args.manifest, settings.split, args.timepoints, mode)?;
    let probs = predict_all(&loaded.checkpoint.model, &loaded.examples, mode)?;
    let scores = ScoreSet::new(
        loaded
            .examples
            .iter()
            .zip(probs)
            .map(|(e, score)| ScoredEye {
                id: e.id.clone(),
                score,
                label: e.label,
            })
            .collect(),
    )?;
    let context = EvalContext {
        checkpoint: args.ckpt.display().to_string(),
        manifest: args.manifest.display().to_string(),
        split: settings.split,
        bootstrap: settings.bootstrap,
        seed: settings.seed,
        training: &loaded.meta,
    };
    let context = serde_json::to_value(context).expect("context serializes");
    let report = EvalReport::build(scores, settings.bootstrap, settings.seed, mode, context)?;
    write_text(&args.report, &report.to_json())?;
    let roc = args
        .roc
        .clone()
        .unwrap_or_else(|| args.report.with_extension("roc.csv"));
    write_text(&roc, &roc_csv(&report.roc))?;
    let plot = args
        .plot
        .clone()
        .unwrap_or_else(|| args.report.with_extension("roc.svg"));
    let cfg = &loaded.meta.config;
    let title = format!(
        "T={} {} ({} split, n={})",
        cfg.timepoints,
        if cfg.interval_scaling { "scaled" } else { "unscaled" },
        settings.split,
        report.n_eyes
    );
    write_text(&plot, &roc_svg(&report, &title))?;
    println!(
        "AUC {:.4} ({:.4}, {:.4})  sensitivity {:.3} ({:.3}, {:.3})  specificity {:.3} ({:.3}, {:.3})  threshold {}",
        report.auc,
        report.auc_ci.lower,
        report.auc_ci.upper,
        report.sensitivity,
        report.sensitivity_ci.lower,
        report.sensitivity_ci.upper,
        report.specificity,
        report.specificity_ci.lower,
        report.specificity_ci.upper,
        report.threshold
    );
    println!(
        "report {}, roc {}, plot {}",
        args.report.display(),
        roc.display(),
        plot.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Comparison {
    report_a: String,
    report_b: String,
    n_eyes: usize,
    #[serde(flatten)]
    test: PairedTest,
}

fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EvalReport::from_json(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

pub fn compare_cmd(args: &CompareArgs) -> Result<()> {
    let a = read_report(&args.report_a)?;
    let b = read_report(&args.report_b)?;
    let test = delong_test(&a.scores, &b.scores)?;
    println!(
        "AUC A {:.4}  AUC B {:.4}  ΔAUC {:+.4}  z {:.3}  p {:.4e}",
        test.auc_a, test.auc_b, test.delta, test.z, test.p_value
    );
    let cmp = Comparison {
        report_a: args.report_a.display().to_string(),
        report_b: args.report_b.display().to_string(),
        n_eyes: a.n_eyes,
        test,
    };
    let text = serde_json::to_string_pretty(&cmp).expect("comparison serializes") + "\n";
    write_text(&args.out, &text)?;
    println!("comparison {}", args.out.display());
    Ok(())
}

/// Blue → cyan → yellow → red ramp for a value in [0, 1].
pub fn heat_color(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    let stops = [[0.0, 0.0, 0.5], [0.0, 0.6, 1.0], [1.0, 1.0, 0.0], [0.9, 0.0, 0.0]];
    let x = v * (stops.len() - 1) as f64;
    let i = (x.floor() as usize).min(stops.len() - 2);
    let f = x - i as f64;
    std::array::from_fn(|c| stops[i][c] * (1.0 - f) + stops[i + 1][c] * f)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Heatmap raster and an `original | overlay` composite for one visit.
fn cam_images(image: &[f64], map: &ClassActivation, size: usize) -> Result<(RawImage, RawImage)> {
    let heat = map.upsampled.data();
    let mut heatmap = Vec::with_capacity(size * size * 3);
    let mut composite = vec![0u8; size * size * 2 * 3];
    for r in 0..size {
        for c in 0..size {
            let color = heat_color(heat[r * size + c]);
            heatmap.extend(color.map(to_u8));
            let px = &image[(r * size + c) * 3..(r * size + c) * 3 + 3];
            for ch in 0..3 {
                composite[(r * 2 * size + c) * 3 + ch] = to_u8(px[ch]);
                composite[(r * 2 * size + size + c) * 3 + ch] = to_u8(0.5 * px[ch] + 0.5 * color[ch]);
            }
        }
    }
    Ok((
        RawImage::new(size, size, heatmap)?,
        RawImage::new(2 * size, size, composite)?,
    ))
}

pub fn cam_cmd(args: &CamArgs, mode: Execution) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.ckpt)?;
    if !checkpoint.model.config().cam_head {
        return Err(Error::Config(format!(
            "{} has no CAM head; retrain with `longiprog train --cam-head`",
            args.ckpt.display()
        )));
    }
    let meta = TrainMeta::from_checkpoint(&checkpoint)?;
    let records = read_manifest(&args.manifest)?;
    let by_id: HashMap<&str, &VisitSequence> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let record = by_id.get(args.eye_id.as_str()).ok_or_else(|| {
        Error::Input(format!(
            "eye id {:?} is not in {}",
            args.eye_id,
            args.manifest.display()
        ))
    })?;
    let (eligible, excluded) = filter_eligible(vec![(*record).clone()], OBSERVED_VISITS);
    if let Some(ex) = excluded.first() {
        return Err(Error::Input(format!("eye {} is not eligible: {}", ex.id, ex.reason)));
    }
    let t = meta.config.timepoints;
    let example = load_examples(&eligible, base_dir(&args.manifest), t, &meta.config.preprocess, mode)?
        .pop()
        .expect("one record in, one example out");
    let maps = cam(&checkpoint.model, &example.input)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let size = meta.config.preprocess.target_size;
    for (k, (map, visit)) in maps.iter().zip(&example.input.visits).enumerate() {
        let image = match visit {
            longiprog::model::VisitInput::Image(img) => img,
            longiprog::model::VisitInput::Features(_) => {
                return Err(Error::Config("class activation maps need image inputs".into()))
            }
        };
        let (heat, composite) = cam_images(image.data(), map, size)?;
        heat.write_ppm(&args.out.join(format!("{}_t{k}_heatmap.ppm", args.eye_id)))?;
        composite.write_ppm(&args.out.join(format!("{}_t{k}_composite.ppm", args.eye_id)))?;
    }
    println!(
        "wrote {} heatmaps and composites for {} (label {}) to {}",
        maps.len(),
        args.eye_id,
        example.label,
        args.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heat_ramp_endpoints() {
        assert_eq!(heat_color(0.0), [0.0, 0.0, 0.5]);
        assert_eq!(heat_color(1.0), [0.9, 0.0, 0.0]);
        assert_eq!(heat_color(2.0), heat_color(1.0));
        let mid = heat_color(0.5);
        assert!(mid.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn history_next_to_checkpoint() {
        assert_eq!(
            history_path(Path::new("out/m.lpgn")),
            PathBuf::from("out/m.history.csv")
        );
    }
}
