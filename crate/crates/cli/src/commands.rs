//! One function per subcommand.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rscn::config::ExperimentConfig;
use rscn::data::{self, stratified_folds, Dataset};
use rscn::eval::{self, AblationVariant, ResultRecord};
use rscn::metrics::clustering_accuracy;
use rscn::model::Model;
use rscn::spectral::{make_pseudo_labels, PseudoLabelState};
use rscn::train::{self, TrainLog};
use rscn::{Error, Result, Tensor};

use crate::manifest::Manifest;
use crate::{ConfigArgs, OUTPUT_DIR_ENV};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn output_dir(flag: Option<PathBuf>, default_name: &str) -> Result<PathBuf> {
    let dir = flag
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| Path::new("runs").join(default_name));
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

struct Context {
    cfg: ExperimentConfig,
    dataset: Dataset<f64>,
    out: PathBuf,
}

fn context(args: &ConfigArgs) -> Result<Context> {
    let cfg = ExperimentConfig::load(&args.config, &args.overrides)?;
    let dataset = cfg.data.load::<f64>(cfg.seed)?;
    let out = output_dir(args.out.clone(), &cfg.name)?;
    Ok(Context { cfg, dataset, out })
}

fn new_model(ctx: &Context) -> Result<Model<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
    Model::new(&ctx.cfg.architecture, &ctx.dataset.samples.shape()[1..], ctx.dataset.k, &mut rng)
}

/// Saves the model even when training diverged, then reports the result.
fn finish_stage(
    result: Result<()>,
    model: &Model<f64>,
    log: &TrainLog,
    ctx: &Context,
    name: &str,
    manifest: &mut Manifest,
) -> Result<()> {
    let ckpt = ctx.out.join(format!("{name}.bin"));
    model.save(&ckpt)?;
    log.write_csv(&ctx.out.join("train_log.csv"))?;
    manifest.output(&format!("{name}.bin"));
    manifest.output("train_log.csv");
    for (stage, rule) in &log.stop_rules {
        log::info!("{stage:?} stage stopped: {rule}");
    }
    log::info!("checkpoint written to {}", ckpt.display());
    result
}

pub fn gen_synth(args: &ConfigArgs) -> Result<()> {
    let ctx = context(args)?;
    let mut manifest = Manifest::new("gen-synth", Some(&ctx.cfg)).input(&args.config);
    if ctx.dataset.samples.ndim() == 4 {
        let dir = ctx.out.join("images");
        let files = data::write_image_dir(&ctx.dataset, &dir)?;
        log::info!("wrote {} images under {}", files.len(), dir.display());
        manifest.output("images");
    } else {
        let path = ctx.out.join("data.csv");
        data::write_csv_dataset(&ctx.dataset, &path)?;
        log::info!("wrote {} rows to {}", ctx.dataset.len(), path.display());
        manifest.output("data.csv");
    }
    manifest.write(&ctx.out)
}

pub fn pretrain_ae(args: &ConfigArgs) -> Result<()> {
    let ctx = context(args)?;
    let mut manifest = Manifest::new("pretrain-ae", Some(&ctx.cfg)).input(&args.config);
    let mut model = new_model(&ctx)?;
    let mut log = TrainLog::new();
    let result = train::pretrain_autoencoder(&mut model, ctx.dataset.unlabeled(), &ctx.cfg, &mut log);
    finish_stage(result, &model, &log, &ctx, "ae", &mut manifest)?;
    manifest.write(&ctx.out)
}

fn load_or_pretrain(ctx: &Context, checkpoint: Option<&Path>, log: &mut TrainLog, dsc: bool) -> Result<Model<f64>> {
    if let Some(path) = checkpoint {
        let model = Model::load(path)?;
        if model.sample_shape != ctx.dataset.samples.shape()[1..] || model.k != ctx.dataset.k {
            return Err(Error::Config(format!(
                "{} was trained for samples {:?} with k={}, but the config gives {:?} with k={}",
                path.display(),
                model.sample_shape,
                model.k,
                &ctx.dataset.samples.shape()[1..],
                ctx.dataset.k
            )));
        }
        return Ok(model);
    }
    let mut model = new_model(ctx)?;
    train::pretrain_autoencoder(&mut model, ctx.dataset.unlabeled(), &ctx.cfg, log)?;
    if dsc {
        train::pretrain_dscnet(&mut model, ctx.dataset.unlabeled(), &ctx.cfg, log)?;
    }
    Ok(model)
}

fn report_pseudo_labels(state: &PseudoLabelState<f64>, ctx: &Context, manifest: &mut Manifest) -> Result<()> {
    state.write_csv(&ctx.out.join("pseudo_labels.csv"))?;
    manifest.output("pseudo_labels.csv");
    let acc = clustering_accuracy(&state.labels, &ctx.dataset.labels, ctx.dataset.k)?;
    println!("clustering accuracy: {acc:.4}");
    Ok(())
}

pub fn pretrain_dsc(args: &ConfigArgs, checkpoint: Option<&Path>) -> Result<()> {
    let ctx = context(args)?;
    let mut manifest = Manifest::new("pretrain-dsc", Some(&ctx.cfg)).input(&args.config);
    if let Some(p) = checkpoint {
        manifest = manifest.input(p);
    }
    let mut log = TrainLog::new();
    let mut model = load_or_pretrain(&ctx, checkpoint, &mut log, false)?;
    let result = train::pretrain_dscnet(&mut model, ctx.dataset.unlabeled(), &ctx.cfg, &mut log);
    finish_stage(result, &model, &log, &ctx, "dsc", &mut manifest)?;
    if let Some(c) = &model.c {
        c.write_csv(&ctx.out.join("c.csv"))?;
        manifest.output("c.csv");
    }
    manifest.write(&ctx.out)
}

pub fn train(args: &ConfigArgs, checkpoint: Option<&Path>) -> Result<()> {
    let ctx = context(args)?;
    let mut manifest = Manifest::new("train", Some(&ctx.cfg)).input(&args.config);
    if let Some(p) = checkpoint {
        manifest = manifest.input(p);
    }
    let mut log = TrainLog::new();
    let mut model = load_or_pretrain(&ctx, checkpoint, &mut log, true)?;
    let result = train::train_full(&mut model, ctx.dataset.unlabeled(), &ctx.cfg, &mut log);
    let state = match result {
        Ok(state) => {
            finish_stage(Ok(()), &model, &log, &ctx, "model", &mut manifest)?;
            state
        }
        Err(e) => return finish_stage(Err(e), &model, &log, &ctx, "model", &mut manifest),
    };
    report_pseudo_labels(&state, &ctx, &mut manifest)?;
    manifest.write(&ctx.out)
}

pub fn cluster(args: &ConfigArgs, checkpoint: &Path) -> Result<()> {
    let ctx = context(args)?;
    let mut manifest = Manifest::new("cluster", Some(&ctx.cfg)).input(&args.config).input(checkpoint);
    let model = Model::<f64>::load(checkpoint)?;
    let c = model
        .c
        .as_ref()
        .ok_or_else(|| Error::Config(format!("{} holds no representation matrix", checkpoint.display())))?;
    if c.n() != ctx.dataset.len() {
        return Err(Error::Config(format!(
            "{} was trained on {} samples, the config yields {}",
            checkpoint.display(),
            c.n(),
            ctx.dataset.len()
        )));
    }
    let state = make_pseudo_labels(c.matrix(), ctx.dataset.k, &ctx.cfg.postprocess, ctx.cfg.seed)?;
    report_pseudo_labels(&state, &ctx, &mut manifest)?;
    manifest.write(&ctx.out)
}

/// Image files directly in `dir`, or else in its subdirectories.
fn collect_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let direct = data::list_images(dir, None)?;
    if !direct.is_empty() {
        return Ok(direct);
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    let mut files = Vec::new();
    for d in subdirs {
        files.extend(data::list_images(&d, None)?);
    }
    if files.is_empty() {
        return Err(Error::Data {
            path: dir.to_path_buf(),
            message: "no images found".into(),
        });
    }
    Ok(files)
}

pub fn predict(checkpoint: &Path, input: &Path, out: Option<PathBuf>) -> Result<()> {
    let model = Model::<f64>::load(checkpoint)?;
    let out = output_dir(out, "predict")?;
    let mut manifest = Manifest::new("predict", None).input(checkpoint).input(input);
    let (names, samples): (Vec<String>, Tensor<f64>) = if input.is_dir() {
        let files = collect_images(input)?;
        let names = files
            .iter()
            .map(|f| f.strip_prefix(input).unwrap_or(f).display().to_string())
            .collect();
        (names, data::load_image_files(&files)?)
    } else {
        let m = data::load_csv_matrix::<f64>(input)?;
        let names = (0..m.nrows()).map(|i| format!("{}:{}", input.display(), i + 1)).collect();
        (names, Tensor::from_matrix(&m))
    };
    let classes = model.predict_unseen(&samples)?;
    let path = out.join("predictions.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Data { path: path.clone(), message: e.to_string() })?;
    let err = |e: csv::Error| Error::Data { path: path.clone(), message: e.to_string() };
    w.write_record(["file", "class"]).map_err(err)?;
    for (name, class) in names.iter().zip(&classes) {
        w.write_record([name.as_str(), &class.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    manifest.output("predictions.csv");
    println!("classified {} samples into {}", classes.len(), path.display());
    manifest.write(&out)
}

pub fn evaluate(args: &ConfigArgs, fold: Option<usize>, jobs: Option<usize>, all_variants: bool) -> Result<()> {
    let ctx = context(args)?;
    let command = if all_variants { "ablate" } else { "evaluate" };
    let mut manifest = Manifest::new(command, Some(&ctx.cfg)).input(&args.config);
    let mut plan = stratified_folds(&ctx.dataset.labels, ctx.cfg.folds.num_folds, ctx.cfg.seed, ctx.cfg.folds.regime())?;
    if let Some(f) = fold {
        if f >= plan.folds.len() {
            return Err(Error::InvalidArgument(format!("fold {f} out of range for {} folds", plan.folds.len())));
        }
        plan.folds = vec![plan.folds[f].clone()];
    }
    let variants = if all_variants { AblationVariant::ALL.to_vec() } else { vec![AblationVariant::of(&ctx.cfg)] };
    let workers = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let mut records = eval::run_grid(&ctx.dataset, &plan, &variants, &ctx.cfg, workers);
    if let Some(f) = fold {
        records.iter_mut().for_each(|r| r.fold = f);
    }
    eval::emit_report(&records, &ctx.out)?;
    manifest.output("results.csv");
    manifest.output("report.md");
    summarize(&records);
    manifest.write(&ctx.out)
}

fn summarize(records: &[ResultRecord]) {
    let failed = records.iter().filter(|r| r.accuracy.is_none()).count();
    println!("{} records, {failed} failed", records.len());
    for r in records {
        match r.accuracy {
            Some(a) => println!("{} fold {} {:?}: {a:.4}", r.variant, r.fold, r.split),
            None => println!("{} fold {} {:?}: failed", r.variant, r.fold, r.split),
        }
    }
}

pub fn report(results: &Path, out: Option<PathBuf>) -> Result<()> {
    let records = eval::read_results_csv(results)?;
    if records.is_empty() {
        return Err(Error::Data {
            path: results.to_path_buf(),
            message: "no records".into(),
        });
    }
    let dir = match out {
        Some(d) => d,
        None => results.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let md = dir.join("report.md");
    std::fs::write(&md, eval::report_markdown(&records)).map_err(|e| io_err(&md, e))?;
    let mut manifest = Manifest::new("report", None).input(results);
    manifest.output("report.md");
    manifest.write(&dir)
}
