//! `ramap-forge` command line: simulate, confmap, train, synth, eval, render.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::annotations::{format_annotations, read_annotations};
use crate::conditioning::build_confmap;
use crate::config::RunConfig;
use crate::dataset::{build_manifest, ingest_annotations, simulate_frames, DatasetManifest, ManifestEntry, Split};
use crate::diffusion::{
    load_checkpoint, sample, save_checkpoint, train, AdamState, Denoiser, TrainReport, TrainingPair,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, extract_peaks, nms, psnr, Detection, EvalReport, FrameResult};
use crate::io::{read_confmap, read_ramap, write_confmap, write_ramap, CONFMAP_MAGIC, RAMAP_MAGIC};
use crate::maps::ConfMap;
use crate::render::{confmap_ppm, ramap_pgm, write_image};
use crate::rng::SeededRng;

/// Stream ids under the run seed.
const STREAM_SPLIT: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_SYNTH: u64 = 4;

pub const THREADS_ENV: &str = "RAMAP_FORGE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ramap-forge", version, about = "Conditional diffusion synthesis of radar range-azimuth maps")]
pub struct Cli {
    /// JSON run configuration; missing keys take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an oracle dataset and its manifest.
    Simulate {
        #[arg(long, default_value_t = 64)]
        frames: usize,
        /// Write peak-flattened ConfMaps.
        #[arg(long)]
        no_gac: bool,
    },
    /// Rasterize an annotation CSV into one ConfMap per frame.
    Confmap {
        #[arg(long)]
        annotations: PathBuf,
        /// Extra frame ids to emit even without annotations.
        #[arg(long, value_delimiter = ',')]
        frames: Vec<String>,
        #[arg(long)]
        no_gac: bool,
    },
    /// Train the denoiser on the manifest's training split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint path; defaults to `<out>/checkpoint.dnsr`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lambda_tcr: Option<f64>,
    },
    /// Sample one RAMap per input ConfMap.
    Synth {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of `.cnfm` files.
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        confmaps: Option<PathBuf>,
        /// Use the ConfMaps of the manifest's test split.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Score predictions against a manifest's test split.
    Eval {
        /// Directory with `<frame_id>.ramap`, `<frame_id>.cnfm` and/or `detections.csv`.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// CSV report path; a `.txt` table is written next to it.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write a `.ramap` as PGM or a `.cnfm` as PPM.
    Render { input: PathBuf, output: PathBuf },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={v:?} is not a positive integer")))?;
        // the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Loads the config file (or defaults), applies flag overrides and validates.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = Some(o.clone());
    }
    match &cli.command {
        Command::Simulate { no_gac, .. } | Command::Confmap { no_gac, .. } => {
            cfg.disable_gac |= *no_gac;
        }
        Command::Train { epochs, max_steps, lr, batch_size, lambda_tcr, .. } => {
            if let Some(v) = epochs {
                cfg.optimizer.epochs = *v;
            }
            if max_steps.is_some() {
                cfg.optimizer.max_steps = *max_steps;
            }
            if let Some(v) = lr {
                cfg.optimizer.lr = *v;
            }
            if let Some(v) = batch_size {
                cfg.optimizer.batch_size = *v;
            }
            if let Some(v) = lambda_tcr {
                cfg.tcr.lambda_tcr = *v;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    configure_threads()?;
    let cfg = resolve_config(cli)?;
    println!("config_hash={} seed={}", cfg.hash(), cfg.seed);
    let log = |msg: String| {
        if !cli.quiet {
            eprintln!("{msg}");
        }
    };
    match &cli.command {
        Command::Simulate { frames, .. } => {
            let out = out_dir(&cfg)?;
            let m = cmd_simulate(&cfg, *frames, &out)?;
            log(format!("wrote {} frames to {}", m.len(), out.display()));
        }
        Command::Confmap { annotations, frames, .. } => {
            let out = out_dir(&cfg)?;
            let written = cmd_confmap(&cfg, annotations, frames, &out)?;
            log(format!("wrote {} confmaps to {}", written.len(), out.display()));
        }
        Command::Train { manifest, checkpoint, .. } => {
            let ckpt = match checkpoint {
                Some(p) => p.clone(),
                None => out_dir(&cfg)?.join("checkpoint.dnsr"),
            };
            let report = cmd_train(&cfg, manifest, &ckpt)?;
            if let Some((head, tail)) = report.head_tail_means(10) {
                log(format!("{} steps, loss {head:.5} -> {tail:.5}", report.losses.len()));
            }
        }
        Command::Synth { checkpoint, confmaps, manifest } => {
            let out = out_dir(&cfg)?;
            let inputs = match (confmaps, manifest) {
                (Some(dir), _) => confmaps_in_dir(dir)?,
                (None, Some(m)) => DatasetManifest::load(m)?
                    .split(Split::Test)
                    .map(|e| (e.frame_id.clone(), e.confmap_path.clone()))
                    .collect(),
                (None, None) => return Err(Error::Config("synth needs --confmaps or --manifest".into())),
            };
            let n = cmd_synth(&cfg, checkpoint, &inputs, &out)?.len();
            log(format!("sampled {n} maps into {}", out.display()));
        }
        Command::Eval { pred, manifest, report } => {
            let csv_path = match report {
                Some(p) => p.clone(),
                None => out_dir(&cfg)?.join("report.csv"),
            };
            let rep = cmd_eval(&cfg, pred, manifest, &csv_path)?;
            print!("{}", rep.to_text());
        }
        Command::Render { input, output } => cmd_render(input, output)?,
    }
    Ok(())
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.out_dir
        .clone()
        .ok_or_else(|| Error::Config("no output directory: pass --out or set out_dir".into()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Oracle dataset under `out`: `annotations/`, `ramap/`, `confmap/`,
/// `manifest.csv` and the resolved `config.json`.
pub fn cmd_simulate(cfg: &RunConfig, n_frames: usize, out: &Path) -> Result<DatasetManifest> {
    for sub in ["annotations", "ramap", "confmap"] {
        create_dir(&out.join(sub))?;
    }
    let frames = simulate_frames(&cfg.scenes, n_frames, &cfg.geometry, &cfg.catalog, &cfg.gac, cfg.seed)?;
    let entries = frames
        .par_iter()
        .map(|f| {
            let entry = ManifestEntry {
                frame_id: f.frame_id.clone(),
                scene: f.scene.clone(),
                split: Split::Train,
                annotation_path: Path::new("annotations").join(format!("{}.csv", f.frame_id)),
                ramap_path: Path::new("ramap").join(format!("{}.ramap", f.frame_id)),
                confmap_path: Path::new("confmap").join(format!("{}.cnfm", f.frame_id)),
            };
            let rows = f.annotations.iter().map(|a| (f.frame_id.as_str(), a));
            write_text(&out.join(&entry.annotation_path), &format_annotations(rows, &cfg.catalog)?)?;
            write_ramap(&f.ramap, out.join(&entry.ramap_path))?;
            let conf = build_confmap(&f.annotations, &cfg.geometry, &cfg.catalog, cfg.gac_for_conditioning())?;
            write_confmap(&conf, out.join(&entry.confmap_path))?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = if entries.is_empty() {
        DatasetManifest::default()
    } else {
        build_manifest(entries, cfg.split_fraction, &mut SeededRng::derive(cfg.seed, &[STREAM_SPLIT]))?
    };
    manifest.write(out.join("manifest.csv"))?;
    write_text(&out.join("config.json"), &cfg.to_json())?;
    Ok(manifest)
}

/// One `<frame_id>.cnfm` per frame in the annotation file plus `extra_frames`.
pub fn cmd_confmap(cfg: &RunConfig, annotations: &Path, extra_frames: &[String], out: &Path) -> Result<Vec<PathBuf>> {
    let mut frames = ingest_annotations(annotations, &cfg.geometry, &cfg.catalog)?.frames;
    for id in extra_frames {
        frames.entry(id.clone()).or_default();
    }
    create_dir(out)?;
    frames
        .iter()
        .map(|(id, anns)| {
            if id.contains(['/', '\\']) {
                return Err(Error::Data(format!("frame id {id:?} is not a file name")));
            }
            let conf = build_confmap(anns, &cfg.geometry, &cfg.catalog, cfg.gac_for_conditioning())?;
            let path = out.join(format!("{id}.cnfm"));
            write_confmap(&conf, &path)?;
            Ok(path)
        })
        .collect()
}

fn check_confmap(cfg: &RunConfig, conf: &ConfMap, path: &Path) -> Result<()> {
    if !conf.geometry().matches(&cfg.geometry) || conf.n_channels() != cfg.catalog.len() {
        return Err(Error::Data(format!(
            "{} does not match the configured geometry and class count",
            path.display()
        )));
    }
    Ok(())
}

/// Loads the training split of a manifest as (RAMap, ConfMap) pairs.
pub fn load_training_pairs(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<Vec<TrainingPair>> {
    manifest
        .split(Split::Train)
        .map(|e| {
            let x0 = read_ramap(&e.ramap_path)?;
            if !x0.geometry().matches(&cfg.geometry) {
                return Err(Error::Data(format!(
                    "{} does not match the configured geometry",
                    e.ramap_path.display()
                )));
            }
            let confmap = read_confmap(&e.confmap_path)?;
            check_confmap(cfg, &confmap, &e.confmap_path)?;
            Ok(TrainingPair { x0: x0.into_grid(), confmap })
        })
        .collect()
}

/// Trains from a fresh initialization and writes the checkpoint plus a
/// `loss.csv` (`step,total,mse,tcr`) beside it.
pub fn cmd_train(cfg: &RunConfig, manifest: &Path, checkpoint: &Path) -> Result<TrainReport> {
    let manifest = DatasetManifest::load(manifest)?;
    let pairs = load_training_pairs(cfg, &manifest)?;
    let schedule = cfg.schedule()?;
    let mut denoiser = Denoiser::new(cfg.denoiser, &mut SeededRng::derive(cfg.seed, &[STREAM_INIT]))?;
    let mut state = AdamState::new(denoiser.param_count());
    let report = if cfg.optimizer.epochs == 0 || cfg.optimizer.max_steps == Some(0) {
        TrainReport::default()
    } else {
        let mut rng = SeededRng::derive(cfg.seed, &[STREAM_TRAIN]);
        train(&mut denoiser, &mut state, &pairs, &schedule, &cfg.optimizer, &cfg.tcr, &mut rng)?
    };
    if let Some(dir) = checkpoint.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_checkpoint(&denoiser, &state, checkpoint)?;
    let mut csv = String::from("step,total,mse,tcr\n");
    for (k, ((t, m), r)) in report.losses.iter().zip(&report.mse).zip(&report.tcr).enumerate() {
        csv.push_str(&format!("{k},{t},{m},{r}\n"));
    }
    write_text(&checkpoint.with_file_name("loss.csv"), &csv)?;
    Ok(report)
}

fn confmaps_in_dir(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "cnfm") {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            out.push((stem, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Samples `<out>/<frame_id>.ramap` for each `(frame_id, confmap path)`.
/// Sample `k` uses its own stream, so results do not depend on threading.
pub fn cmd_synth(cfg: &RunConfig, checkpoint: &Path, inputs: &[(String, PathBuf)], out: &Path) -> Result<Vec<PathBuf>> {
    let (denoiser, _) = load_checkpoint(checkpoint)?;
    if *denoiser.spec() != cfg.denoiser {
        return Err(Error::Config("checkpoint architecture differs from the configured denoiser".into()));
    }
    let schedule = cfg.schedule()?;
    create_dir(out)?;
    inputs
        .par_iter()
        .enumerate()
        .map(|(k, (id, path))| {
            let conf = read_confmap(path)?;
            check_confmap(cfg, &conf, path)?;
            let mut rng = SeededRng::derive(cfg.seed, &[STREAM_SYNTH, k as u64]);
            let map = sample(&conf, &denoiser, &schedule, &mut rng)?;
            let dest = out.join(format!("{id}.ramap"));
            write_ramap(&map, &dest)?;
            Ok(dest)
        })
        .collect()
}

fn detections_from_confmap(cfg: &RunConfig, conf: &ConfMap) -> Result<Vec<Detection>> {
    let d = &cfg.detection;
    let mut all = Vec::new();
    for c in 0..conf.n_channels() {
        all.extend(extract_peaks(conf.channel(c), &cfg.geometry, c, d.min_score, d.max_peaks));
    }
    nms(&all, d.nms_threshold, &cfg.catalog)
}

/// Evaluates the test split (or every frame when there is no test split).
///
/// PSNR uses `<pred>/<frame_id>.ramap`. Detections come from
/// `<pred>/detections.csv` when present (missing scores count as 1) and
/// otherwise from peaks of `<pred>/<frame_id>.cnfm`.
pub fn cmd_eval(cfg: &RunConfig, pred: &Path, manifest: &Path, report_csv: &Path) -> Result<EvalReport> {
    let manifest = DatasetManifest::load(manifest)?;
    let mut entries: Vec<&ManifestEntry> = manifest.split(Split::Test).collect();
    if entries.is_empty() {
        entries = manifest.entries.iter().collect();
    }
    let det_path = pred.join("detections.csv");
    let listed: Option<BTreeMap<String, Vec<Detection>>> = if det_path.exists() {
        let mut by_frame: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
        for rec in read_annotations(&det_path, &cfg.catalog)? {
            let score = rec.score.unwrap_or(1.0);
            by_frame
                .entry(rec.frame_id)
                .or_default()
                .push(Detection::from_annotation(&rec.annotation, score));
        }
        Some(by_frame)
    } else {
        None
    };

    let frames = entries
        .par_iter()
        .map(|e| {
            let gts = read_annotations(&e.annotation_path, &cfg.catalog)?
                .into_iter()
                .map(|r| r.annotation)
                .collect();
            let ramap_path = pred.join(format!("{}.ramap", e.frame_id));
            let psnr_db = if ramap_path.exists() {
                let gt = read_ramap(&e.ramap_path)?;
                Some(psnr(&gt, &read_ramap(&ramap_path)?, 1.0)?)
            } else {
                None
            };
            let preds = match &listed {
                Some(map) => map.get(&e.frame_id).cloned().unwrap_or_default(),
                None => {
                    let conf_path = pred.join(format!("{}.cnfm", e.frame_id));
                    if conf_path.exists() {
                        let conf = read_confmap(&conf_path)?;
                        check_confmap(cfg, &conf, &conf_path)?;
                        detections_from_confmap(cfg, &conf)?
                    } else {
                        Vec::new()
                    }
                }
            };
            Ok(FrameResult {
                scene: e.scene.clone(),
                gts,
                preds,
                psnr: psnr_db,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(&frames, &cfg.catalog)?;
    if let Some(dir) = report_csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_text(report_csv, &report.to_csv())?;
    write_text(&report_csv.with_extension("txt"), &report.to_text())?;
    Ok(report)
}

/// Chooses PGM or PPM from the input file's magic bytes.
pub fn cmd_render(input: &Path, output: &Path) -> Result<()> {
    let bytes = fs::read(input).map_err(|e| Error::io(input, e))?;
    let image = if bytes.starts_with(RAMAP_MAGIC) {
        ramap_pgm(&crate::io::decode_ramap(&bytes)?)
    } else if bytes.starts_with(CONFMAP_MAGIC) {
        confmap_ppm(&crate::io::decode_confmap(&bytes)?)?
    } else {
        return Err(Error::Format(format!("{} is neither a RAMap nor a ConfMap", input.display())));
    };
    write_image(&image, output)
}
