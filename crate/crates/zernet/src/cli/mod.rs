//! Command-line front end. Subcommands delegate to the library modules;
//! process exit codes follow the crate-wide error mapping.

pub mod config;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::mesh::{
    load_mesh, map_back_to_vertices, normalize_area, read_field_file, read_sample_set,
    sample_uniform, write_field_csv, write_field_text, write_ply, write_sample_set, TriangleMesh,
};
use crate::net::gradcheck;
use crate::net::{read_checkpoint, write_checkpoint, Checkpoint, TrainState, ZerNetModel};
use crate::patch::{extract_aligned_xyz, write_patch_set, PatchSet};
use crate::train::manifest::Dataset;
use crate::train::metrics::EvalReport;
use crate::train::synth::{generate_synthetic, SynthConfig};
use crate::train::{prepare_entry, run_loocv, standardization, PreparedEntry, Trainer};
use crate::zernike::ZernikeBasisSet;

use config::{load_config, RunConfig};

#[derive(Parser)]
#[command(
    name = "zernet",
    version,
    about = "Zernike convolution networks on triangle meshes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON run configuration; built-in defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config value, e.g. --set train.lr=0.01
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        load_config(self.config.as_deref(), &self.set)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample points uniformly over a mesh surface
    Sample {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, default_value_t = 8000)]
        count: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build geodesic disk patches and Zernike operators for a sample set
    Patches {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train on every manifest entry, checkpointing each epoch
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Continue from the checkpoint in the output directory
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Predict a scalar field on a mesh from a trained checkpoint
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        mesh: PathBuf,
        /// Base path; `.txt` and `.csv` outputs are written next to it
        #[arg(long)]
        out_base: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score predictions: leave-one-out over a manifest, or one mesh against a truth field
    Eval {
        /// Dataset manifest for leave-one-out cross validation
        #[arg(long, conflicts_with_all = ["mesh", "truth", "pred"])]
        manifest: Option<PathBuf>,
        #[arg(long, requires = "truth")]
        mesh: Option<PathBuf>,
        /// Ground-truth per-vertex field for --mesh
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Score this prediction file instead of predicting from a checkpoint
        #[arg(long, conflicts_with = "checkpoint")]
        pred: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Base path for `.json` and `.txt` report files
        #[arg(long)]
        out_base: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Export a mesh with a per-vertex scalar as a color-ramped binary PLY
    Export {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check hand-written gradients against central differences
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Generate a synthetic bumped-sphere dataset with curvature targets
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 6)]
        count: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        subdivisions: u32,
        #[arg(long, default_value_t = 0.12)]
        amplitude: f64,
    },
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Sample {
            mesh,
            count,
            seed,
            out,
        } => cmd_sample(&mesh, count, seed, &out),
        Command::Patches {
            mesh,
            samples,
            out,
            config,
        } => cmd_patches(&mesh, &samples, &out, &config.load()?),
        Command::Train {
            manifest,
            out_dir,
            resume,
            config,
        } => cmd_train(manifest, out_dir, resume, &config.load()?),
        Command::Predict {
            checkpoint,
            mesh,
            out_base,
            config,
        } => cmd_predict(checkpoint, &mesh, &out_base, &config.load()?),
        Command::Eval {
            manifest,
            mesh,
            truth,
            pred,
            checkpoint,
            out_base,
            config,
        } => cmd_eval(
            manifest,
            mesh,
            truth,
            pred,
            checkpoint,
            out_base,
            &config.load()?,
        ),
        Command::Export { mesh, field, out } => cmd_export(&mesh, &field, &out),
        Command::Gradcheck { seed, corrupt } => cmd_gradcheck(seed, corrupt),
        Command::Synth {
            out_dir,
            count,
            seed,
            subdivisions,
            amplitude,
        } => cmd_synth(&out_dir, count, seed, subdivisions, amplitude),
    }
}

fn cmd_sample(mesh_path: &Path, count: usize, seed: u64, out: &Path) -> Result<()> {
    if count == 0 {
        return Err(Error::Usage("sample count must be positive".into()));
    }
    let mesh = load_mesh(mesh_path)?;
    let points = sample_uniform(&mesh, count, seed)?;
    write_sample_set(out, &points, &mesh.content_hash())?;
    println!(
        "{} vertices, {} faces, {} samples, total area {:.6}",
        mesh.vertex_count(),
        mesh.face_count(),
        points.len(),
        mesh.total_area()
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_patches(mesh_path: &Path, samples: &Path, out: &Path, config: &RunConfig) -> Result<()> {
    let mesh = load_mesh(mesh_path)?;
    let (points, stored_hash) = read_sample_set(samples)?;
    if stored_hash != mesh.content_hash() {
        return Err(Error::DataMismatch(format!(
            "sample set {} was built from a different mesh than {}",
            samples.display(),
            mesh_path.display()
        )));
    }
    let basis = ZernikeBasisSet::new(config.patch.max_order)?;
    let patch_config = config.patch_config(&basis)?;
    if patch_config.area_fraction >= 0.2 {
        eprintln!(
            "warning: area_fraction {} is large; the flat-disk model of a patch degrades once \
             its radius approaches the surface's bending radius",
            patch_config.area_fraction
        );
    }
    let set = PatchSet::build(&points, &patch_config, &basis, mesh.total_area())?;
    write_patch_set(out, &set, &points.content_hash())?;

    let sizes: Vec<usize> = set.patches.iter().map(|p| p.member_count()).collect();
    let sparse = sizes
        .iter()
        .filter(|&&s| s < patch_config.min_patch_points)
        .count();
    println!(
        "{} patches, disk radius {:.4}, {} below the sparse floor of {} members",
        set.patches.len(),
        set.r0,
        sparse,
        patch_config.min_patch_points
    );
    print_size_histogram(&sizes);
    println!("wrote {}", out.display());
    Ok(())
}

fn print_size_histogram(sizes: &[usize]) {
    let min = *sizes.iter().min().expect("patch set is never empty");
    let max = *sizes.iter().max().expect("patch set is never empty");
    let buckets = 8usize.min(max - min + 1);
    let width = (max - min) / buckets + 1;
    let mut counts = vec![0usize; buckets];
    for &s in sizes {
        counts[((s - min) / width).min(buckets - 1)] += 1;
    }
    let tallest = *counts.iter().max().expect("at least one bucket");
    println!("patch sizes:");
    for (i, &c) in counts.iter().enumerate() {
        let lo = min + i * width;
        let hi = (lo + width - 1).min(max);
        let bar = "#".repeat(if tallest == 0 { 0 } else { c * 40 / tallest });
        println!("  {lo:>5}-{hi:<5} {c:>6} {bar}");
    }
}

/// Holds `.lock` in the output directory for the lifetime of the run.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Usage(format!(
                "output directory {} is locked by another run; remove {} if that run is gone",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn require_path(flag: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone()).ok_or_else(|| {
        Error::Usage(format!(
            "no {what} given; pass the flag or set it in the config paths section"
        ))
    })
}

fn cmd_train(
    manifest: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    resume: bool,
    config: &RunConfig,
) -> Result<()> {
    let manifest_path = require_path(manifest, &config.paths.manifest, "dataset manifest")?;
    let out_dir = require_path(out_dir, &config.paths.out_dir, "output directory")?;
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let _lock = DirLock::acquire(&out_dir)?;

    let dataset = Dataset::load(&manifest_path)?;
    let net = config.net_config();
    let basis = ZernikeBasisSet::new(net.max_order)?;
    let prep = config.prep_config(&basis)?;
    let settings = config.train_settings();

    let entries: Vec<PreparedEntry> = (0..dataset.len())
        .map(|i| prepare_entry(&dataset, i, &net, &prep))
        .collect::<Result<_>>()?;
    println!(
        "prepared {} meshes at {} samples each",
        entries.len(),
        prep.samples
    );

    let ckpt_path = out_dir.join("checkpoint.znck");
    let mut trainer = if resume {
        let ckpt = read_checkpoint(&ckpt_path)?;
        let trainer = Trainer::resume(net, &settings, &ckpt, entries.len())?;
        println!(
            "resumed from epoch {} (step {})",
            trainer.epoch, trainer.state.step
        );
        trainer
    } else {
        let refs: Vec<&PreparedEntry> = entries.iter().collect();
        let (mean, std) = standardization(&refs)?;
        Trainer::new(net, &settings, mean, std, entries.len())?
    };

    let log_path = out_dir.join("loss.csv");
    let mut log = if resume && log_path.exists() {
        fs::OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?
    } else {
        let mut f = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        writeln!(f, "epoch,step,train_mse").map_err(|e| Error::io(&log_path, e))?;
        f
    };

    if trainer.epoch >= settings.epochs {
        println!(
            "checkpoint already at epoch {}, nothing to do (configured epochs: {})",
            trainer.epoch, settings.epochs
        );
        return Ok(());
    }
    let refs: Vec<(usize, &PreparedEntry)> = entries.iter().enumerate().collect();
    while trainer.epoch < settings.epochs {
        let mse = trainer.epoch_step(&refs)?;
        write_checkpoint(&ckpt_path, &trainer.checkpoint())?;
        writeln!(log, "{},{},{:.12e}", trainer.epoch, trainer.state.step, mse)
            .map_err(|e| Error::io(&log_path, e))?;
        println!(
            "epoch {}/{} train mse {:.6e}",
            trainer.epoch, settings.epochs, mse
        );
    }
    println!("wrote {}", ckpt_path.display());
    Ok(())
}

/// Shared predict pipeline: normalize, sample, build patches, run the model,
/// and carry predictions back to the original vertices.
fn predict_on_mesh(
    ckpt: &Checkpoint,
    config: &RunConfig,
    mesh_path: &Path,
) -> Result<(Vec<f64>, TriangleMesh)> {
    let original = load_mesh(mesh_path)?;
    let (mesh, _scale) = normalize_area(&original)?;
    let net = config.net_config();
    let basis = ZernikeBasisSet::new(net.max_order)?;
    let prep = config.prep_config(&basis)?;
    let mut model = ZerNetModel::new(net)?;
    let mut state = TrainState::with_defaults(model.param_count());
    ckpt.restore(&mut model, &mut state)?;

    let points = sample_uniform(&mesh, prep.samples, prep.seed)?;
    let set = PatchSet::build(&points, &prep.patch, &basis, mesh.total_area())?;
    let input = extract_aligned_xyz(&points, &set.patches, &set.operators)?;
    let (pred, _) = model.forward(&input, &set)?;
    let pred: Vec<f64> = pred
        .into_iter()
        .map(|p| p * ckpt.target_std + ckpt.target_mean)
        .collect();
    let vertex_values = map_back_to_vertices(&points, &pred, &mesh)?;
    Ok((vertex_values, mesh))
}

fn cmd_predict(
    checkpoint: Option<PathBuf>,
    mesh_path: &Path,
    out_base: &Path,
    config: &RunConfig,
) -> Result<()> {
    let ckpt_path = require_path(checkpoint, &config.paths.checkpoint, "checkpoint")?;
    let ckpt = read_checkpoint(&ckpt_path)?;
    let (values, _mesh) = predict_on_mesh(&ckpt, config, mesh_path)?;
    let txt = out_base.with_extension("txt");
    let csv = out_base.with_extension("csv");
    write_field_text(&txt, &values)?;
    write_field_csv(&csv, &values)?;
    let (min, max) = value_range(&values);
    println!(
        "predicted {} vertices, range [{min:.6}, {max:.6}]",
        values.len()
    );
    println!("wrote {} and {}", txt.display(), csv.display());
    Ok(())
}

fn value_range(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

fn cmd_eval(
    manifest: Option<PathBuf>,
    mesh: Option<PathBuf>,
    truth: Option<PathBuf>,
    pred: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    out_base: Option<PathBuf>,
    config: &RunConfig,
) -> Result<()> {
    match (manifest, mesh) {
        (Some(manifest), None) => eval_loocv(&manifest, out_base.as_deref(), config),
        (None, Some(mesh)) => {
            let truth = truth.ok_or_else(|| {
                Error::Usage("single-mesh eval needs --truth with the ground-truth field".into())
            })?;
            eval_single(
                &mesh,
                &truth,
                pred,
                checkpoint,
                out_base.as_deref(),
                config,
            )
        }
        _ => Err(Error::Usage(
            "eval needs exactly one of --manifest (leave-one-out) or --mesh with --truth".into(),
        )),
    }
}

fn eval_single(
    mesh_path: &Path,
    truth_path: &Path,
    pred: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    out_base: Option<&Path>,
    config: &RunConfig,
) -> Result<()> {
    let mesh = load_mesh(mesh_path)?;
    let truth = read_field_file(truth_path, mesh.vertex_count())?;
    let values = match (pred, checkpoint.or_else(|| config.paths.checkpoint.clone())) {
        (Some(pred_path), _) => read_field_file(&pred_path, mesh.vertex_count())?,
        (None, Some(ckpt_path)) => {
            let ckpt = read_checkpoint(&ckpt_path)?;
            predict_on_mesh(&ckpt, config, mesh_path)?.0
        }
        (None, None) => {
            return Err(Error::Usage(
                "single-mesh eval needs --pred or --checkpoint to produce predictions".into(),
            ))
        }
    };
    let report = EvalReport::compute(&values, &truth, &config.export.thresholds)?;
    let label = mesh_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "mesh".into());
    let table = EvalReport::table(&[(label, report.clone())]);
    print!("{table}");
    if let Some(base) = out_base {
        write_report_files(base, &serde_json::to_value(&report).expect("report serializes"), &table)?;
    }
    Ok(())
}

fn eval_loocv(manifest: &Path, out_base: Option<&Path>, config: &RunConfig) -> Result<()> {
    let dataset = Dataset::load(manifest)?;
    let net = config.net_config();
    let basis = ZernikeBasisSet::new(net.max_order)?;
    let prep = config.prep_config(&basis)?;
    let settings = config.train_settings();
    let report = run_loocv(&dataset, &net, &prep, &settings, |p| {
        println!(
            "fold {} epoch {}/{} train mse {:.6e}",
            p.fold, p.epoch, p.epochs, p.train_mse
        );
    })?;
    let table = report.table();
    print!("{table}");
    if let Some(base) = out_base {
        let json = serde_json::json!({
            "folds": report.folds,
            "mean_mape": report.mean_mape(),
            "mean_pcc": report.mean_pcc(),
            "mean_baseline_pcc": report.mean_baseline_pcc(),
        });
        write_report_files(base, &json, &table)?;
    }
    Ok(())
}

fn write_report_files(base: &Path, json: &serde_json::Value, table: &str) -> Result<()> {
    let json_path = base.with_extension("json");
    let txt_path = base.with_extension("txt");
    let mut text = serde_json::to_string_pretty(json).expect("report serializes");
    text.push('\n');
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    fs::write(&txt_path, table).map_err(|e| Error::io(&txt_path, e))?;
    println!("wrote {} and {}", json_path.display(), txt_path.display());
    Ok(())
}

/// Two-segment blue-white-red ramp over `t` in [0, 1].
fn ramp_color(t: f64) -> [u8; 3] {
    let low = [59.0, 76.0, 192.0];
    let high = [180.0, 4.0, 38.0];
    let mid = [221.0, 221.0, 221.0];
    let t = t.clamp(0.0, 1.0);
    let (a, b, s) = if t < 0.5 {
        (low, mid, t * 2.0)
    } else {
        (mid, high, (t - 0.5) * 2.0)
    };
    let mut out = [0u8; 3];
    for (o, (ca, cb)) in out.iter_mut().zip(a.iter().zip(&b)) {
        *o = (ca + (cb - ca) * s).round() as u8;
    }
    out
}

fn cmd_export(mesh_path: &Path, field_path: &Path, out: &Path) -> Result<()> {
    let mesh = load_mesh(mesh_path)?;
    let values = read_field_file(field_path, mesh.vertex_count())?;
    let (min, max) = value_range(&values);
    let flat = min == max;
    let colors: Vec<[u8; 3]> = values
        .iter()
        .map(|&v| {
            let t = if flat { 0.5 } else { (v - min) / (max - min) };
            ramp_color(t)
        })
        .collect();
    write_ply(out, &mesh, &values, Some(&colors))?;

    let sidecar = out.with_extension("range.json");
    let mut text = serde_json::to_string_pretty(&serde_json::json!({
        "min": min,
        "max": max,
        "flat": flat,
    }))
    .expect("range serializes");
    text.push('\n');
    fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))?;

    print!(
        "wrote {} ({} vertices), range [{min:.6}, {max:.6}]",
        out.display(),
        mesh.vertex_count()
    );
    println!("{}", if flat { ", constant field" } else { "" });
    println!("wrote {}", sidecar.display());
    Ok(())
}

fn cmd_gradcheck(seed: u64, corrupt: bool) -> Result<()> {
    let report = gradcheck::run(seed, corrupt)?;
    println!("{report}");
    if report.passed {
        Ok(())
    } else {
        Err(Error::Verification(format!(
            "max relative gradient error {:.3e} exceeds {:.0e}",
            report.max_rel_err,
            gradcheck::GRAD_TOL
        )))
    }
}

fn cmd_synth(out_dir: &Path, count: usize, seed: u64, subdivisions: u32, amplitude: f64) -> Result<()> {
    let config = SynthConfig {
        count,
        seed,
        subdivisions,
        amplitude,
    };
    let manifest = generate_synthetic(&config, out_dir)?;
    println!(
        "wrote {} meshes with curvature targets and {} to {}",
        manifest.entries.len(),
        "manifest.json",
        out_dir.display()
    );
    Ok(())
}
