//! The `fcbp` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 I/O or format
//! error, 3 numeric failure.

use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::checkpoint::{load_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::FanBeamGeometry;
use crate::nn::{mse_loss, network_forward, Architecture, NetworkParams};
use crate::optim::{self, EpochMetrics};
use crate::phantom::{self, encode_dataset, read_dataset, shepp_logan, Dataset};
use crate::projector::SystemMatrix;
use crate::weight_lab::{
    self, analytic_detector_series, analytic_view_series, fixed_detector_series, fixed_view_series,
    render_image, render_montage, write_png, FcWeightMatrix,
};

/// Montage columns for the per-view (fixed detector) series.
pub const DETECTOR_SERIES_COLS: usize = 10;
/// Montage columns for the per-detector (fixed view) series.
pub const VIEW_SERIES_COLS: usize = 16;

#[derive(Debug, Parser)]
#[command(
    name = "fcbp",
    version,
    about = "Fan-beam CT data, FC-network training and weight-map analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the training (and validation) datasets described by a config.
    GenData { config: PathBuf },
    /// Train the network on the configured dataset.
    Train {
        config: PathBuf,
        /// Continue from this checkpoint instead of a fresh initialisation.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render learned and analytic weight-map montages and compare them.
    #[command(group(ArgGroup::new("mode").required(true).args(["detector", "view"])))]
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Fix this detector (1-based) and show every view.
        #[arg(long)]
        detector: Option<usize>,
        /// Fix this view (1-based) and show every detector.
        #[arg(long)]
        view: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        grid_cols: Option<usize>,
    },
    /// Memory needed by a dense sinogram-to-image FC layer.
    MemoryReport {
        #[arg(value_parser = clap::value_parser!(u64).range(1..))]
        image_side: u64,
        #[arg(value_parser = clap::value_parser!(u64).range(1..))]
        views: u64,
        #[arg(value_parser = clap::value_parser!(u64).range(1..))]
        detectors: u64,
        #[arg(value_parser = clap::value_parser!(u64).range(1..))]
        bytes: u64,
    },
    /// Run one sinogram through a checkpoint.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        /// `<dataset>:<index>` (0-based), `shepp-logan`, or a raw
        /// little-endian f32 sinogram file.
        #[arg(long)]
        input: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if code == 0 {
                write!(out, "{e}")
            } else {
                write!(err, "{e}")
            };
            return code;
        }
    };
    configure_threads();
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Honours `FCBP_THREADS` for the global worker pool.
fn configure_threads() {
    if let Some(n) = std::env::var("FCBP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        // Fails only if the pool already exists, which is fine.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::GenData { config } => cmd_gen_data(&config, out),
        Command::Train { config, resume } => cmd_train(&config, resume.as_deref(), out),
        Command::Inspect {
            checkpoint,
            detector,
            view,
            out: dir,
            grid_cols,
        } => {
            let mode = match (detector, view) {
                (Some(b), None) => InspectMode::FixedDetector(b),
                (None, Some(l)) => InspectMode::FixedView(l),
                _ => unreachable!("clap enforces exactly one mode"),
            };
            cmd_inspect(&checkpoint, mode, &dir, grid_cols, out)
        }
        Command::MemoryReport {
            image_side,
            views,
            detectors,
            bytes,
        } => cmd_memory_report(image_side, views, detectors, bytes, out),
        Command::Reconstruct {
            checkpoint,
            input,
            out: dir,
        } => cmd_reconstruct(&checkpoint, &input, &dir, out).map(|_| ()),
    }
}

fn say(out: &mut dyn Write, line: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn cmd_gen_data(config: &Path, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let sm = SystemMatrix::build(&cfg.geometry)?;
    let mut splits = vec![(
        cfg.train.dataset_path.clone(),
        cfg.phantoms.n_train,
        cfg.phantoms.seed,
    )];
    if let (Some(path), n) = (&cfg.output.val_dataset_path, cfg.phantoms.n_val) {
        if n > 0 {
            splits.push((path.clone(), n, cfg.phantoms.seed.wrapping_add(1)));
        }
    }
    for (path, n, seed) in splits {
        let ds = phantom::build_dataset(n, seed, &cfg.geometry, &sm)?;
        let bytes = encode_dataset(&ds);
        ensure_parent(&path)?;
        write_file(&path, &bytes)?;
        say(
            out,
            format!(
                "{}: {} items, sha256 {}",
                path.display(),
                ds.len(),
                sha256_hex(&bytes)
            ),
        )?;
    }
    Ok(())
}

fn mean_loss(params: &NetworkParams<f32>, ds: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for (img, sino) in ds.images.iter().zip(&ds.sinograms) {
        let f = network_forward(params, sino)?;
        total += mse_loss(&f.output, &img.values)? as f64;
    }
    Ok(total / ds.len() as f64)
}

pub fn cmd_train(config: &Path, resume: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    if cfg.train.checkpoint_dir.is_none() {
        return Err(Error::Config("train.checkpoint_dir is required".into()));
    }
    let ds = read_dataset(&cfg.train.dataset_path)?;
    if ds.geometry != cfg.geometry {
        return Err(Error::Config(format!(
            "dataset {} was generated for a different geometry",
            cfg.train.dataset_path.display()
        )));
    }
    ensure_parent(&cfg.output.metrics_log)?;
    let log_path = cfg.output.metrics_log.clone();
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;

    let mut on_epoch = |m: &EpochMetrics| -> Result<()> {
        let line = serde_json::to_string(m).expect("metrics serialise");
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        say(
            out,
            format!(
                "epoch {:>4}  loss {:.6e}  lr {:.3e}",
                m.epoch, m.mean_loss, m.lr
            ),
        )
    };
    let outcome = match resume {
        Some(path) => {
            let ckpt = load_checkpoint::<f32>(path)?;
            optim::resume(&cfg.train, &ds, ckpt, &mut on_epoch)?
        }
        None => {
            let arch = Architecture::for_geometry(&cfg.geometry, cfg.train.hidden_channels);
            let init = NetworkParams::init(arch, cfg.train.seed)?;
            optim::train(&cfg.train, &ds, init, &mut on_epoch)?
        }
    };
    let dir = cfg.train.checkpoint_dir.as_ref().expect("checked above");
    say(
        out,
        format!(
            "finished at step {}; final checkpoint {}",
            outcome.adam.step,
            dir.join("final.ckpt").display()
        ),
    )?;
    if let Some(val) = &cfg.output.val_dataset_path {
        if val.exists() {
            let vds = read_dataset(val)?;
            if vds.geometry == cfg.geometry {
                say(
                    out,
                    format!("validation loss {:.6e}", mean_loss(&outcome.params, &vds)?),
                )?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InspectMode {
    FixedDetector(usize),
    FixedView(usize),
}

/// Paths written by [`cmd_inspect`].
#[derive(Debug, Clone)]
pub struct InspectOutputs {
    pub learned_png: PathBuf,
    pub analytic_png: PathBuf,
    pub comparison_jsonl: PathBuf,
    pub summary_json: PathBuf,
}

pub fn cmd_inspect(
    checkpoint: &Path,
    mode: InspectMode,
    dir: &Path,
    grid_cols: Option<usize>,
    out: &mut dyn Write,
) -> Result<()> {
    let ckpt = load_checkpoint::<f32>(checkpoint)?;
    let sm = SystemMatrix::build(&ckpt.geometry)?;
    let w = FcWeightMatrix::from_params(&ckpt.params, &ckpt.geometry)?;
    let written = inspect(&w, &sm, mode, dir, grid_cols)?;
    for p in [
        &written.learned_png,
        &written.analytic_png,
        &written.comparison_jsonl,
        &written.summary_json,
    ] {
        say(out, format!("wrote {}", p.display()))?;
    }
    let summary = fs::read_to_string(&written.summary_json)
        .map_err(|e| Error::io(&written.summary_json, e))?;
    say(out, summary.trim_end())
}

/// Renders the learned/analytic montage pair and the comparison report for
/// one series.
pub fn inspect<T: crate::Real>(
    w: &FcWeightMatrix<T>,
    sm: &SystemMatrix,
    mode: InspectMode,
    dir: &Path,
    grid_cols: Option<usize>,
) -> Result<InspectOutputs> {
    let (tag, learned, analytic, default_cols) = match mode {
        InspectMode::FixedDetector(b) => (
            format!("detector_{b}"),
            fixed_detector_series(w, b)?,
            analytic_detector_series(sm, b)?,
            DETECTOR_SERIES_COLS,
        ),
        InspectMode::FixedView(l) => (
            format!("view_{l}"),
            fixed_view_series(w, l)?,
            analytic_view_series(sm, l)?,
            VIEW_SERIES_COLS,
        ),
    };
    let cols = grid_cols.unwrap_or(default_cols);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let outputs = InspectOutputs {
        learned_png: dir.join(format!("learned_{tag}.png")),
        analytic_png: dir.join(format!("analytic_{tag}.png")),
        comparison_jsonl: dir.join(format!("comparison_{tag}.jsonl")),
        summary_json: dir.join(format!("summary_{tag}.json")),
    };
    write_png(&outputs.learned_png, &render_montage(&learned, cols)?)?;
    write_png(&outputs.analytic_png, &render_montage(&analytic, cols)?)?;

    let pairs: Vec<(usize, usize)> = learned.iter().map(|m| (m.l, m.b)).collect();
    let (rows, summary) = weight_lab::emergence_report_for(w, sm, &pairs, 0)?;
    let mut lines = String::new();
    for r in &rows {
        lines.push_str(&serde_json::to_string(r).expect("serialise"));
        lines.push('\n');
    }
    write_file(&outputs.comparison_jsonl, lines.as_bytes())?;
    let summary = serde_json::json!({
        "mean_abs_ncc": summary.mean_abs_ncc,
        "n_degenerate": summary.n_degenerate,
        "baseline_mean_abs_ncc": summary.baseline_mean_abs_ncc,
    });
    write_file(
        &outputs.summary_json,
        format!("{}\n", serde_json::to_string(&summary).expect("serialise")).as_bytes(),
    )?;
    Ok(outputs)
}

pub fn cmd_memory_report(
    image_side: u64,
    views: u64,
    detectors: u64,
    bytes: u64,
    out: &mut dyn Write,
) -> Result<()> {
    let r = weight_lab::memory_report(image_side, views, detectors, bytes)?;
    say(
        out,
        format!(
            "{} weights ({}), {} bytes ({}B)",
            r.n_weights,
            weight_lab::binary_units(r.n_weights),
            r.bytes,
            weight_lab::binary_units(r.bytes)
        ),
    )?;
    if !r.feasible {
        say(
            out,
            format!(
                "infeasible: exceeds the {}B of a single GPU",
                weight_lab::binary_units(weight_lab::GPU_MEMORY_BYTES)
            ),
        )?;
    }
    Ok(())
}

/// What [`cmd_reconstruct`] produced.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub output: Vec<f32>,
    pub fc1_out: Vec<f32>,
    pub label: Option<Vec<f32>>,
    /// NCC between output and label, when a label is known.
    pub ncc: Option<f64>,
}

fn load_input(spec: &str, geom: &FanBeamGeometry) -> Result<(Vec<f32>, Option<Vec<f32>>)> {
    let dims = format!(
        "{} views x {} detectors ({} values)",
        geom.n_views,
        geom.n_detectors,
        geom.sinogram_len()
    );
    if spec == "shepp-logan" {
        let sm = SystemMatrix::build(geom)?;
        let label = shepp_logan(geom);
        let sino = phantom::project_image(&sm, &label)?;
        return Ok((sino, Some(label.values)));
    }
    if let Some((path, idx)) = spec.rsplit_once(':') {
        if let Ok(idx) = idx.parse::<usize>() {
            let path = Path::new(path);
            let ds = read_dataset(path)?;
            if ds.geometry != *geom {
                return Err(Error::Config(format!(
                    "dataset {} has {} views x {} detectors and a {}x{} image; checkpoint expects {dims} and a {}x{} image",
                    path.display(),
                    ds.geometry.n_views,
                    ds.geometry.n_detectors,
                    ds.geometry.image_rows,
                    ds.geometry.image_cols,
                    geom.image_rows,
                    geom.image_cols
                )));
            }
            if idx >= ds.len() {
                return Err(Error::index(
                    "dataset item",
                    idx,
                    ds.len().saturating_sub(1),
                ));
            }
            return Ok((
                ds.sinograms[idx].clone(),
                Some(ds.images[idx].values.clone()),
            ));
        }
    }
    let path = Path::new(spec);
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 4 * geom.sinogram_len() {
        return Err(Error::Config(format!(
            "{} holds {} bytes; checkpoint expects a {dims} little-endian f32 sinogram",
            path.display(),
            bytes.len()
        )));
    }
    let sino = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((sino, None))
}

fn f32_bytes(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn reconstruct(ckpt: &Checkpoint<f32>, input: &str, dir: &Path) -> Result<Reconstruction> {
    let geom = ckpt.geometry;
    let (sino, label) = load_input(input, &geom)?;
    let f = network_forward(&ckpt.params, &sino)?;
    if f.output.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("network output is not finite".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (rows, cols) = (geom.image_rows, geom.image_cols);
    let as64 = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
    write_png(
        &dir.join("output.png"),
        &render_image(&as64(&f.output), rows, cols)?,
    )?;
    write_png(
        &dir.join("fc1_out.png"),
        &render_image(&as64(&f.fc1_out), rows, cols)?,
    )?;
    write_file(&dir.join("output.f32"), &f32_bytes(&f.output))?;
    write_file(&dir.join("fc1_out.f32"), &f32_bytes(&f.fc1_out))?;
    let mut score = None;
    if let Some(label) = &label {
        write_png(
            &dir.join("label.png"),
            &render_image(&as64(label), rows, cols)?,
        )?;
        score = weight_lab::ncc(&as64(&f.output), &as64(label));
    }
    Ok(Reconstruction {
        output: f.output,
        fc1_out: f.fc1_out,
        label,
        ncc: score,
    })
}

pub fn cmd_reconstruct(
    checkpoint: &Path,
    input: &str,
    dir: &Path,
    out: &mut dyn Write,
) -> Result<Reconstruction> {
    let ckpt = load_checkpoint::<f32>(checkpoint)?;
    let rec = reconstruct(&ckpt, input, dir)?;
    say(
        out,
        format!(
            "wrote output.png, fc1_out.png and raw dumps to {}",
            dir.display()
        ),
    )?;
    if let Some(score) = rec.ncc {
        say(out, format!("ncc(output, label) = {score:.4}"))?;
    }
    Ok(rec)
}
