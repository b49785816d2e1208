use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use vsl_core::eval::{
    classify_features, evaluate_retrieval, extract_features, iou_probs, IoUReport, RetrievalPair, SampleScore,
    DEFAULT_THRESHOLD,
};
use vsl_core::model::{load_checkpoint, Vsl};
use vsl_core::tools::{self, DEFAULT_NOISE};
use vsl_core::trainer::{examples_from, RunConfig, Trainer};
use vsl_core::voxel::{
    load_dataset, load_voxel, parse_off, save_voxel, voxelize, voxelize_surface, write_obj, DatasetManifest,
    ManifestEntry, Order, Split, VoxelGrid, GRID_SIDE,
};
use vsl_core::{Error, Exec};

#[derive(Parser)]
#[command(name = "vsl", version, about = "Hierarchical voxel VAE: voxelize, train, evaluate, generate")]
struct Cli {
    /// Run data-parallel work sequentially.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Voxelize OFF meshes into VSLV grids and write a manifest.
    Voxelize {
        /// An OFF file or a directory searched recursively.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = GRID_SIDE)]
        dims: usize,
        #[arg(long)]
        out: PathBuf,
        /// Keep only surface cells instead of filling the interior.
        #[arg(long)]
        surface: bool,
    },
    /// Train a model from a run config and a dataset manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_epochs: Option<u64>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Classification accuracy or IoU report as JSON on stdout.
    Eval {
        #[arg(long, value_enum)]
        mode: EvalMode,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory of precomputed VSLV predictions mirroring the manifest paths.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f32,
        /// Also store the extracted feature matrices (classify mode).
        #[arg(long)]
        features_out: Option<PathBuf>,
    },
    /// Decode noisy variants of a seed shape's code.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_NOISE)]
        noise: f32,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        output: OutputOpts,
    },
    /// Decode codes along the path between two shapes.
    Interpolate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 7)]
        steps: usize,
        #[arg(long)]
        slerp: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        output: OutputOpts,
    },
    /// Decode z_a − z_b + z_c.
    Arith {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        c: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        output: OutputOpts,
    },
    /// Write a VSLV grid as an OBJ mesh.
    ExportObj {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMode {
    Classify,
    Iou,
}

#[derive(clap::Args)]
struct OutputOpts {
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f32,
    /// Also write an OBJ mesh next to each VSLV file.
    #[arg(long)]
    obj: bool,
}

fn exec(cli: &Cli) -> Exec {
    if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

fn env_seed() -> anyhow::Result<Option<u64>> {
    match std::env::var("VSL_SEED") {
        Ok(s) => Ok(Some(
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("VSL_SEED must be an unsigned integer, got {s:?}")))?,
        )),
        Err(_) => Ok(None),
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn load_model(path: &Path) -> anyhow::Result<Vsl<f32>> {
    Ok(load_checkpoint(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?
        .model)
}

fn load_grid_for(model: &Vsl<f32>, path: &Path) -> anyhow::Result<VoxelGrid> {
    let g = load_voxel(path).with_context(|| format!("reading {}", path.display()))?;
    if g.dims() != model.config.grid_dims() {
        return Err(Error::Shape(format!(
            "{} has dims {:?}, the model expects {:?}",
            path.display(),
            g.dims(),
            model.config.grid_dims()
        ))
        .into());
    }
    Ok(g)
}

fn write_outputs(model: &Vsl<f32>, probs: &[f32], stem: &Path, opts: &OutputOpts) -> anyhow::Result<Vec<PathBuf>> {
    let grid = VoxelGrid::from_probabilities(model.config.grid_dims(), probs, opts.threshold)?;
    let vslv = stem.with_extension("vslv");
    save_voxel(&grid, &vslv)?;
    let mut written = vec![vslv];
    if opts.obj {
        let obj = stem.with_extension("obj");
        write_obj_file(&grid, &obj)?;
        written.push(obj);
    }
    Ok(written)
}

fn write_obj_file(grid: &VoxelGrid, path: &Path) -> anyhow::Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    write_obj(grid, BufWriter::new(f))?;
    Ok(())
}

fn collect_off(input: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    if input.is_file() {
        out.push(input.to_path_buf());
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Error::Io {
            path: input.to_path_buf(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_off(&p, out)?;
        } else if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("off")) {
            out.push(p);
        }
    }
    Ok(())
}

/// `category/train/x.off` gives label `category`, split `train`; any
/// other layout uses the parent directory as label and the train split.
fn label_and_split(root: &Path, file: &Path) -> (String, Split) {
    let name = |p: Option<&Path>| {
        p.and_then(Path::file_name)
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let parent = file.parent();
    let split = match name(parent).as_str() {
        "train" => Some(Split::Train),
        "test" => Some(Split::Test),
        _ => None,
    };
    match split {
        Some(s) => (name(parent.and_then(Path::parent)), s),
        None if parent == Some(root) || parent.is_none() => ("unlabeled".into(), Split::Train),
        None => (name(parent), Split::Train),
    }
}

fn cmd_voxelize(input: &Path, dims: usize, out: &Path, surface: bool, exec: Exec) -> anyhow::Result<()> {
    if dims == 0 {
        return Err(Error::Config("--dims must be positive".into()).into());
    }
    let mut files = Vec::new();
    if input.exists() {
        collect_off(input, &mut files)?;
    } else {
        return Err(Error::Data(format!("input not found: {}", input.display())).into());
    }
    if files.is_empty() {
        return Err(Error::Data(format!("no OFF meshes under {}", input.display())).into());
    }
    create_dir(out)?;
    let root = if input.is_dir() { input } else { input.parent().unwrap_or(Path::new("")) };
    let results = exec.map(&files, |_, f| -> anyhow::Result<ManifestEntry> {
        let reader = std::io::BufReader::new(fs::File::open(f)?);
        let mesh = parse_off(reader)?;
        let grid = if surface {
            voxelize_surface(&mesh, [dims; 3])?
        } else {
            voxelize(&mesh, [dims; 3])?
        };
        let rel = f.strip_prefix(root).unwrap_or(f).with_extension("vslv");
        let dest = out.join(&rel);
        if let Some(p) = dest.parent() {
            fs::create_dir_all(p)?;
        }
        save_voxel(&grid, &dest)?;
        let (label, split) = label_and_split(root, f);
        Ok(ManifestEntry { path: rel, label, split })
    });
    let mut entries = Vec::new();
    for (f, r) in files.iter().zip(results) {
        match r {
            Ok(e) => entries.push(e),
            Err(e) => log::warn!("skipping {}: {e:#}", f.display()),
        }
    }
    if entries.is_empty() {
        return Err(Error::Data("no mesh could be voxelized".into()).into());
    }
    let manifest = DatasetManifest::new(entries, out)?;
    let mpath = out.join("manifest.jsonl");
    manifest.write(BufWriter::new(fs::File::create(&mpath)?))?;
    println!(
        "{}",
        json!({ "voxelized": manifest.entries.len(), "skipped": files.len() - manifest.entries.len(), "manifest": mpath })
    );
    Ok(())
}

fn cmd_train(
    config: &Path,
    data: &Path,
    out: &Path,
    max_epochs: Option<u64>,
    resume: Option<&Path>,
    exec: Exec,
) -> anyhow::Result<()> {
    let text = fs::read_to_string(config).map_err(|e| Error::Io {
        path: config.to_path_buf(),
        source: e,
    })?;
    let mut run = RunConfig::from_json(&text)?;
    if let Some(seed) = env_seed()? {
        run.train.seed = seed;
    }
    if let Some(m) = max_epochs {
        run.train.max_epochs = m;
    }
    if exec == Exec::Sequential {
        run.train.exec = exec;
    }
    let manifest = DatasetManifest::load(data)?;
    let samples = load_dataset(&manifest, Split::Train, Order::Manifest, exec)?;
    let examples = examples_from(&samples)?;
    let mut trainer = match resume {
        Some(p) => {
            let ck = load_checkpoint(p).with_context(|| format!("loading checkpoint {}", p.display()))?;
            if ck.model.config != run.model {
                return Err(Error::Config("checkpoint model differs from the config's model".into()).into());
            }
            Trainer::resume(ck, run.train.clone())?
        }
        None => Trainer::new(Vsl::new(run.model.clone(), run.train.seed)?, run.train.clone())?,
    };
    create_dir(out)?;
    let log_path = out.join("log.jsonl");
    let mut log = BufWriter::new(
        fs::OpenOptions::new()
            .create(true)
            .append(resume.is_some())
            .write(true)
            .truncate(resume.is_none())
            .open(&log_path)?,
    );
    let summary = trainer.run(&examples, Some(out), |entry| {
        serde_json::to_writer(&mut log, entry)?;
        writeln!(log)?;
        log.flush()?;
        log::info!("epoch {} total {:.3} rec {:.3} reg {:.3}", entry.epoch, entry.total, entry.rec, entry.reg);
        Ok(())
    })?;
    println!(
        "{}",
        json!({
            "epochs": summary.epochs.len(),
            "steps": summary.steps,
            "stop": format!("{:?}", summary.stop),
            "checkpoint": out.join("last.ckpt"),
            "log": log_path,
        })
    );
    Ok(())
}

fn cmd_eval(
    mode: EvalMode,
    checkpoint: Option<&Path>,
    predictions: Option<&Path>,
    data: &Path,
    threshold: f32,
    features_out: Option<&Path>,
    exec: Exec,
) -> anyhow::Result<()> {
    let manifest = DatasetManifest::load(data)?;
    let report = match mode {
        EvalMode::Classify => {
            let ck = checkpoint.ok_or_else(|| Error::Config("classify needs --checkpoint".into()))?;
            let model = load_model(ck)?;
            let features = |split| -> anyhow::Result<_> {
                let samples = load_dataset(&manifest, split, Order::Manifest, exec)?;
                let grids: Vec<&VoxelGrid> = samples
                    .iter()
                    .map(|s| s.grid().ok_or_else(|| Error::Data(format!("{} has no voxel grid", s.path.display()))))
                    .collect::<Result<_, _>>()?;
                Ok(extract_features(&model, &grids, samples.iter().map(|s| s.label.clone()).collect(), exec)?)
            };
            let train = features(Split::Train)?;
            let test = features(Split::Test)?;
            if let Some(dir) = features_out {
                create_dir(dir)?;
                train.save(&dir.join("train.features"))?;
                test.save(&dir.join("test.features"))?;
            }
            serde_json::to_value(classify_features(&train, &test, exec)?)?
        }
        EvalMode::Iou => {
            let samples = load_dataset(&manifest, Split::Test, Order::Manifest, exec)?;
            if samples.is_empty() {
                return Err(Error::Data("test split is empty".into()).into());
            }
            let rels: Vec<&ManifestEntry> = manifest.split(Split::Test).collect();
            let report = match (checkpoint, predictions) {
                (_, Some(dir)) => {
                    let scores = samples
                        .iter()
                        .zip(&rels)
                        .map(|(s, e)| -> anyhow::Result<SampleScore> {
                            let truth = s.grid().ok_or_else(|| Error::Data(format!("{} has no ground truth", s.path.display())))?;
                            let pred = load_voxel(&dir.join(&e.path).with_extension("vslv"))?;
                            Ok(SampleScore {
                                category: s.label.clone(),
                                iou: iou_probs(&pred.to_f32(), truth, threshold)?,
                            })
                        })
                        .collect::<anyhow::Result<Vec<_>>>()?;
                    IoUReport::from_scores(scores)
                }
                (Some(ck), None) => {
                    let model = load_model(ck)?;
                    if samples.iter().all(|s| s.image().is_some()) {
                        let pairs: Vec<RetrievalPair> = samples
                            .iter()
                            .map(|s| -> anyhow::Result<RetrievalPair> {
                                Ok(RetrievalPair {
                                    category: &s.label,
                                    image: s.image().expect("checked"),
                                    truth: s.grid().ok_or_else(|| {
                                        Error::Data(format!("{} has no paired voxel grid", s.path.display()))
                                    })?,
                                })
                            })
                            .collect::<anyhow::Result<_>>()?;
                        evaluate_retrieval(&pairs, &manifest.labels(), threshold, exec, |img| {
                            model.reconstruct_from_image(img)
                        })?
                    } else {
                        // voxel inputs: score the autoencoding path
                        let scores = exec.try_map(&samples, |_, s| -> vsl_core::Result<SampleScore> {
                            let g = s.grid().ok_or_else(|| Error::Data("sample without grid".into()))?;
                            let probs = model.decode(&model.encode_mean(g)?)?;
                            Ok(SampleScore {
                                category: s.label.clone(),
                                iou: iou_probs(&probs, g, threshold)?,
                            })
                        })?;
                        IoUReport::from_scores(scores)
                    }
                }
                (None, None) => bail!(Error::Config("iou needs --checkpoint or --predictions".into())),
            };
            serde_json::to_value(report)?
        }
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ex = exec(&cli);
    match &cli.command {
        Command::Voxelize { input, dims, out, surface } => cmd_voxelize(input, *dims, out, *surface, ex),
        Command::Train {
            config,
            data,
            out,
            max_epochs,
            resume,
        } => cmd_train(config, data, out, *max_epochs, resume.as_deref(), ex),
        Command::Eval {
            mode,
            checkpoint,
            predictions,
            data,
            threshold,
            features_out,
        } => cmd_eval(
            *mode,
            checkpoint.as_deref(),
            predictions.as_deref(),
            data,
            *threshold,
            features_out.as_deref(),
            ex,
        ),
        Command::Generate {
            checkpoint,
            input,
            noise,
            count,
            seed,
            out,
            output,
        } => {
            let model = load_model(checkpoint)?;
            let grid = load_grid_for(&model, input)?;
            let base = match seed {
                Some(s) => *s,
                None => env_seed()?.unwrap_or(0),
            };
            create_dir(out)?;
            let mut files = Vec::new();
            for i in 0..*count {
                let probs = tools::generate_noisy(&model, &grid, *noise, base.wrapping_add(i as u64))?;
                files.extend(write_outputs(&model, &probs, &out.join(format!("generated_{i:03}")), output)?);
            }
            println!("{}", json!({ "files": files }));
            Ok(())
        }
        Command::Interpolate {
            checkpoint,
            a,
            b,
            steps,
            slerp,
            out,
            output,
        } => {
            let model = load_model(checkpoint)?;
            let (ga, gb) = (load_grid_for(&model, a)?, load_grid_for(&model, b)?);
            let path = if *slerp { tools::Path::Slerp } else { tools::Path::Linear };
            create_dir(out)?;
            let mut files = Vec::new();
            for (i, probs) in tools::interpolate(&model, &ga, &gb, *steps, path)?.iter().enumerate() {
                files.extend(write_outputs(&model, probs, &out.join(format!("interp_{i:03}")), output)?);
            }
            println!("{}", json!({ "files": files }));
            Ok(())
        }
        Command::Arith {
            checkpoint,
            a,
            b,
            c,
            out,
            output,
        } => {
            let model = load_model(checkpoint)?;
            let g = [a, b, c].map(|p| load_grid_for(&model, p));
            let [ga, gb, gc] = g;
            let probs = tools::arithmetic(&model, &ga?, &gb?, &gc?)?;
            create_dir(out)?;
            let files = write_outputs(&model, &probs, &out.join("arith"), output)?;
            println!("{}", json!({ "files": files }));
            Ok(())
        }
        Command::ExportObj { input, out } => {
            let grid = load_voxel(input)?;
            write_obj_file(&grid, out)?;
            println!("{}", json!({ "occupied": grid.count(), "obj": out }));
            Ok(())
        }
    }
}

/// 1 usage/config (including model/data shape mismatches), 2 data, 3 numerical.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) | Error::Shape(_) => 1,
                Error::NonFinite(_) => 3,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return 2;
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
