//! Subcommand bodies. Each resolves its configuration completely before
//! touching the output directory, then writes a `config.toml` snapshot and a
//! `<command>.log` next to its primary outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mlcgcn::data::{
    export_edges, export_importance, export_matrix, generate_synthetic, load_dataset, mean_graph, node_importance,
    roi_labels, save_dataset, top_edges, Dataset, LoadOptions, SyntheticSpec,
};
use mlcgcn::metrics::MetricReport;
use mlcgcn::model::{load_checkpoint, save_checkpoint, Model, ModelConfig};
use mlcgcn::rng::{stream_rng, Stream};
use mlcgcn::training::{ablation_variants, evaluate, gradcheck_model, run_ablation, run_cv, TrainConfig, ABLATION_HEADER};

use crate::config::{CheckpointSection, DataSection, ExportKind, ExportSection, GradcheckSection, Settings, Snapshot};
use crate::{logging, Cli, CliError, Command};

/// Largest model the gradient check accepts.
pub const GRADCHECK_LIMITS: (usize, usize, usize) = (8, 32, 2);

pub const GRADCHECK_HEADER: &str = "block,numel,max_rel_error,worst_index,analytic,numeric,status";

pub fn dispatch(cli: &Cli, s: &Settings) -> Result<i32, CliError> {
    let out = cli.out.as_path();
    match &cli.command {
        Command::Synth(a) => synth(s, out, a.force),
        Command::Train(_) => train(s, out),
        Command::Eval(_) => eval(s, out),
        Command::Ablate(_) => ablate(s, out),
        Command::Gradcheck(_) => gradcheck(s, out),
        Command::Export(_) => export(s, out),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::failure(format!("cannot write {}: {e}", path.display())))
}

/// Creates the run directory, writes the snapshot and starts the log file.
fn open_run(out: &Path, command: &str, snapshot: &Snapshot) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::failure(format!("cannot create {}: {e}", out.display())))?;
    snapshot.write(out)?;
    let log = out.join(format!("{command}.log"));
    logging::attach(&log).map_err(|e| CliError::failure(format!("cannot open {}: {e}", log.display())))
}

fn manifest_path(data: &DataSection) -> Result<PathBuf, CliError> {
    data.manifest
        .clone()
        .ok_or_else(|| CliError::usage("no dataset given: pass --manifest or set data.manifest"))
}

fn load(data: &DataSection) -> Result<Dataset<f64>, CliError> {
    let path = manifest_path(data)?;
    let ds = load_dataset(
        &path,
        LoadOptions {
            truncate_to_min: data.truncate_to_min,
        },
    )?;
    if ds.samples.is_empty() {
        return Err(CliError::failure(format!("{} lists no scans", path.display())));
    }
    Ok(ds)
}

/// Refuses when the model's data dimensions differ from the dataset's, naming each field.
pub fn check_dims(cfg: &ModelConfig, ds: &Dataset<f64>, source: &str) -> Result<(), CliError> {
    let pairs = [
        ("n_rois", cfg.n_rois, ds.manifest.n_rois),
        ("series_len", cfg.series_len, ds.series_len),
        ("classes", cfg.classes, ds.manifest.classes.len()),
    ];
    let bad: Vec<String> = pairs
        .iter()
        .filter(|(_, m, d)| m != d)
        .map(|(name, m, d)| format!("{name} ({source} {m}, dataset {d})"))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{source} does not fit the dataset: {}", bad.join(", "))))
    }
}

fn model_for(s: &Settings, ds: &Dataset<f64>) -> Result<ModelConfig, CliError> {
    let base = ModelConfig::new(ds.manifest.n_rois, ds.series_len, ds.manifest.classes.len());
    let cfg = s.section("model", base)?;
    check_dims(&cfg, ds, "model config")?;
    cfg.validate()?;
    Ok(cfg)
}

fn train_config(s: &Settings) -> Result<TrainConfig, CliError> {
    let cfg = s.section("train", TrainConfig::default())?;
    cfg.validate()?;
    Ok(cfg)
}

fn synth(s: &Settings, out: &Path, force: bool) -> Result<i32, CliError> {
    let spec = s.section("synth", SyntheticSpec::default())?;
    spec.validate()?;
    let occupied = fs::read_dir(out).map(|mut d| d.next().is_some()).unwrap_or(false);
    if occupied && !force {
        return Err(CliError::usage(format!(
            "{} is not empty; pass --force to write into it",
            out.display()
        )));
    }
    let mut snap = Snapshot::default();
    snap.add("synth", &spec);
    open_run(out, "synth", &snap)?;

    let data = generate_synthetic::<f64>(&spec)?;
    let manifest = save_dataset(out, &data.classes, &data.samples)?;
    let truth = out.join("connectomes");
    fs::create_dir_all(&truth).map_err(|e| CliError::failure(format!("cannot create {}: {e}", truth.display())))?;
    let labels = roi_labels(spec.n_rois);
    for (name, c) in data.classes.iter().zip(&data.connectomes) {
        export_matrix(c, &truth.join(format!("{name}.csv")), Some(&labels))?;
    }
    let hubs: Vec<String> = data.hubs.iter().map(usize::to_string).collect();
    write_file(&truth.join("hubs.txt"), &format!("{}\n", hubs.join(",")))?;
    log::info!("wrote {}", manifest.display());
    println!(
        "{} scans, {} classes x {} per class, {} ROIs x {} time points",
        data.samples.len(),
        spec.classes,
        spec.samples_per_class,
        spec.n_rois,
        spec.series_len
    );
    Ok(0)
}

fn train(s: &Settings, out: &Path) -> Result<i32, CliError> {
    let data = s.section("data", DataSection::default())?;
    let train_cfg = train_config(s)?;
    let ds = load(&data)?;
    let model_cfg = model_for(s, &ds)?;
    let mut snap = Snapshot::default();
    snap.add("data", &data);
    snap.add("model", &model_cfg);
    snap.add("train", &train_cfg);
    open_run(out, "train", &snap)?;
    log::info!(
        "{} scans, K = {}, {} folds x {} epochs",
        ds.samples.len(),
        model_cfg.levels,
        train_cfg.folds,
        train_cfg.epochs
    );

    let cv = run_cv(&ds.inputs(), &ds.labels(), &model_cfg, &train_cfg)?;
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| CliError::failure(format!("cannot create {}: {e}", ckpt_dir.display())))?;
    let mut history = String::from("fold,epoch,ce,group,dissimilarity,total\n");
    let mut splits = String::from("fold,scan_id,set\n");
    for f in &cv.folds {
        for (set, indices) in [("train", &f.split.train), ("test", &f.split.test)] {
            for &i in indices {
                let _ = writeln!(splits, "{},{},{set}", f.fold + 1, ds.samples[i].scan_id);
            }
        }
        save_checkpoint(&f.model, &ckpt_dir.join(format!("fold{}.json", f.fold + 1)))?;
        for e in &f.history {
            let _ = writeln!(
                history,
                "{},{},{:.10e},{:.10e},{:.10e},{:.10e}",
                f.fold + 1,
                e.epoch,
                e.ce,
                e.group,
                e.dissimilarity,
                e.total
            );
        }
    }
    write_file(&out.join("history.csv"), &history)?;
    write_file(&out.join("splits.csv"), &splits)?;
    let report = cv.report.to_text();
    write_file(&out.join("report.txt"), &report)?;
    print!("{report}");
    Ok(0)
}

fn metric_text(m: &MetricReport) -> String {
    let mut text = String::from("metric,value\n");
    for (name, v) in MetricReport::NAMES.iter().zip(m.values()) {
        let _ = writeln!(text, "{name},{v:.6}");
    }
    text
}

fn checkpoint_model(s: &Settings) -> Result<(CheckpointSection, Model<f64>), CliError> {
    let ckpt = s.section("checkpoint", CheckpointSection::default())?;
    let path = ckpt
        .path
        .clone()
        .ok_or_else(|| CliError::usage("no checkpoint given: pass --checkpoint or set checkpoint.path"))?;
    let model = load_checkpoint(&path)?;
    Ok((ckpt, model))
}

fn eval(s: &Settings, out: &Path) -> Result<i32, CliError> {
    let data = s.section("data", DataSection::default())?;
    let (ckpt, model) = checkpoint_model(s)?;
    let ds = load(&data)?;
    check_dims(model.config(), &ds, "checkpoint")?;
    let mut snap = Snapshot::default();
    snap.add("data", &data);
    snap.add("checkpoint", &ckpt);
    open_run(out, "eval", &snap)?;

    let (report, _) = evaluate(&model, &ds.inputs(), &ds.labels())?;
    let text = metric_text(&report);
    write_file(&out.join("eval.txt"), &text)?;
    print!("{text}");
    Ok(0)
}

fn ablate(s: &Settings, out: &Path) -> Result<i32, CliError> {
    let data = s.section("data", DataSection::default())?;
    let train_cfg = train_config(s)?;
    let ds = load(&data)?;
    let model_cfg = model_for(s, &ds)?;
    let mut snap = Snapshot::default();
    snap.add("data", &data);
    snap.add("model", &model_cfg);
    snap.add("train", &train_cfg);
    open_run(out, "ablate", &snap)?;

    let rows = run_ablation(&ds.inputs(), &ds.labels(), &model_cfg, &train_cfg, &ablation_variants());
    let mut text = String::from(ABLATION_HEADER);
    text.push('\n');
    for r in &rows {
        text.push_str(&r.to_line());
        text.push('\n');
    }
    write_file(&out.join("ablation.txt"), &text)?;
    print!("{text}");
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        eprintln!("{failed} ablation row(s) failed");
        return Ok(1);
    }
    Ok(0)
}

fn gradcheck(s: &Settings, out: &Path) -> Result<i32, CliError> {
    let model_cfg = s.section("model", ModelConfig::tiny())?;
    let train_cfg = s.section("train", TrainConfig::default())?;
    let check = s.section("gradcheck", GradcheckSection::default())?;
    let (max_n, max_len, max_k) = GRADCHECK_LIMITS;
    if model_cfg.n_rois > max_n || model_cfg.series_len > max_len || model_cfg.levels > max_k {
        return Err(CliError::usage(format!(
            "gradient check needs a tiny model (n_rois <= {max_n}, series_len <= {max_len}, levels <= {max_k}), \
             got {}, {}, {}",
            model_cfg.n_rois, model_cfg.series_len, model_cfg.levels
        )));
    }
    if !(check.eps > 0.0) || !(check.tolerance >= 0.0) || check.samples_per_class == 0 {
        return Err(CliError::usage(
            "gradcheck.eps must be positive, gradcheck.tolerance nonnegative, samples_per_class at least 1",
        ));
    }
    model_cfg.validate()?;
    let mut snap = Snapshot::default();
    snap.add("model", &model_cfg);
    snap.add("train", &train_cfg);
    snap.add("gradcheck", &check);
    open_run(out, "gradcheck", &snap)?;

    let spec = SyntheticSpec {
        classes: model_cfg.classes,
        samples_per_class: check.samples_per_class,
        n_rois: model_cfg.n_rois,
        series_len: model_cfg.series_len,
        hubs: 0,
        seed: train_cfg.seed,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic::<f64>(&spec)?;
    let inputs: Vec<_> = data.samples.iter().map(|x| x.series.clone()).collect();
    let labels: Vec<usize> = data.samples.iter().map(|x| x.label).collect();
    let model = Model::<f64>::new(model_cfg, &mut stream_rng(train_cfg.seed, Stream::Init, 0))?;
    let rows = gradcheck_model(&model, &inputs, &labels, train_cfg.alpha, check.eps)?;

    let mut text = String::from(GRADCHECK_HEADER);
    text.push('\n');
    for r in &rows {
        let status = if r.max_rel_error < check.tolerance { "ok" } else { "FAIL" };
        let _ = writeln!(
            text,
            "{},{},{:.3e},{},{:.6e},{:.6e},{status}",
            r.name, r.numel, r.max_rel_error, r.worst_index, r.analytic, r.numeric
        );
    }
    write_file(&out.join("gradcheck.txt"), &text)?;
    print!("{text}");
    let worst = rows
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .ok_or_else(|| CliError::failure("model has no parameters"))?;
    if rows.iter().any(|r| !(r.max_rel_error < check.tolerance)) {
        eprintln!(
            "gradient check failed: worst block {} index {} relative error {:.3e} (analytic {:.6e}, numeric {:.6e}), tolerance {:e}",
            worst.name, worst.worst_index, worst.max_rel_error, worst.analytic, worst.numeric, check.tolerance
        );
        return Ok(1);
    }
    log::info!("{} blocks within {:e}; worst {} at {:.3e}", rows.len(), check.tolerance, worst.name, worst.max_rel_error);
    Ok(0)
}

fn export(s: &Settings, out: &Path) -> Result<i32, CliError> {
    let data = s.section("data", DataSection::default())?;
    let opts = s.section("export", ExportSection::default())?;
    let what = opts
        .what
        .ok_or_else(|| CliError::usage("nothing to export: name mean-graph, top-edges or node-importance"))?;
    let selector = opts.level.selector()?;
    let (ckpt, model) = checkpoint_model(s)?;
    let ds = load(&data)?;
    check_dims(model.config(), &ds, "checkpoint")?;
    let mut snap = Snapshot::default();
    snap.add("data", &data);
    snap.add("checkpoint", &ckpt);
    snap.add("export", &opts);
    open_run(out, "export", &snap)?;

    let outputs = ds
        .samples
        .iter()
        .map(|x| model.predict(&x.series).map(|(_, levels)| levels))
        .collect::<mlcgcn::Result<Vec<_>>>()?;
    let mean = mean_graph(&outputs, selector)?;
    let path = out.join(what.file_name());
    let rows = match what {
        ExportKind::MeanGraph => {
            export_matrix(&mean, &path, Some(&roi_labels(ds.manifest.n_rois)))?;
            ds.manifest.n_rois
        }
        ExportKind::TopEdges => {
            let edges = top_edges(&mean, opts.fraction, opts.signed)?;
            export_edges(&edges, &path)?;
            edges.len()
        }
        ExportKind::NodeImportance => {
            let ranked = node_importance(&mean, opts.absolute)?;
            export_importance(&ranked, opts.top, &path)?;
            ranked.len().min(opts.top)
        }
    };
    println!("{}: {rows} rows written to {}", what.key(), path.display());
    Ok(0)
}
