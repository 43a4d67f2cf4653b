use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use meltpool::geometry::GridSpec;
use meltpool::ingest::{DatasetManifest, TrackManifest};
use meltpool::model::Checkpoint;
use meltpool::pipeline::{
    evaluate_windows, export_embeddings, finetune_experiment, fraction_sweep, generate_hatch_dataset, hatch_analyze,
    model_from_checkpoint, predict_track, preprocess_dataset, sequence_length_sweep, split_combos, train_experiment,
    write_sweep, Dataset, EpochLog, ExperimentConfig, HatchManifest,
};
use meltpool::synthdata::generate_grid_dataset;
use meltpool::{Error, Result};

#[derive(Parser)]
#[command(name = "mpf", version, about = "Melt-pool cross-sections from thermal image sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic power-velocity grid (and hatch cases if configured).
    Generate(Common),
    /// Write cropped, averaged and normalized frames of a dataset.
    Preprocess(Common),
    /// Train from scratch on the training side of the split.
    Train(Common),
    /// Continue training a pretrained checkpoint on a fraction of the training side.
    Finetune(Common),
    /// Score a checkpoint on the test side of the split.
    Evaluate(Common),
    /// Train one model per window length.
    SweepSeqlen(Common),
    /// Fine-tuned versus randomly initialized models per data fraction.
    SweepFraction(Common),
    /// Overlap of adjacent hatches.
    HatchAnalyze(Common),
    /// Decoder tokens of every window.
    ExportEmbeddings(Common),
    /// Predict the cross-sections of one track.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Track manifest (JSON).
        #[arg(long)]
        track: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
        cfg.synth.seed = s;
    }
    Ok(cfg)
}

fn log_epoch(e: &EpochLog) {
    match e.val_mse {
        Some(v) => eprintln!("epoch {:>4}  train mse {:.6}  val mse {:.6}", e.epoch, e.train_mse, v),
        None => eprintln!("epoch {:>4}  train mse {:.6}", e.epoch, e.train_mse),
    }
}

fn dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    Dataset::load_path(cfg.require(&cfg.manifest, "manifest")?, cfg.half_window)
}

fn checkpoint(cfg: &ExperimentConfig, which: &Option<PathBuf>, key: &str) -> Result<Checkpoint> {
    Checkpoint::load(cfg.require(which, key)?)
}

fn check_grid(ckpt: &Checkpoint, grid: &GridSpec) -> Result<()> {
    match ckpt.meta.grid {
        Some(g) if g != *grid => Err(Error::validation(format!(
            "checkpoint was trained on target grid {g:?}, data uses {grid:?}"
        ))),
        _ => Ok(()),
    }
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = load_config(&c)?;
            let m = generate_grid_dataset(&cfg.synth, &c.out)?;
            eprintln!("wrote {} tracks to {}", m.tracks.len(), c.out.display());
            if let Some(h) = &cfg.hatch {
                let dir = c.out.join("hatch");
                let hm = generate_hatch_dataset(&cfg.synth, h, m.sdf_grid, &dir)?;
                eprintln!("wrote {} hatch groups to {}", hm.groups.len(), dir.display());
            }
        }
        Command::Preprocess(c) => {
            let cfg = load_config(&c)?;
            let m = DatasetManifest::load(cfg.require(&cfg.manifest, "manifest")?)?;
            let tracks = preprocess_dataset(&m, cfg.half_window, &c.out)?;
            eprintln!("preprocessed {} tracks into {}", tracks.len(), c.out.display());
        }
        Command::Train(c) => {
            let cfg = load_config(&c)?;
            let data = dataset(&cfg)?;
            let e = train_experiment(&cfg, &data, &mut log_epoch)?;
            e.save(&c.out, &data, cfg.seed, None)?;
            report_summary(&e);
        }
        Command::Finetune(c) => {
            let cfg = load_config(&c)?;
            let data = dataset(&cfg)?;
            let path = cfg.require(&cfg.pretrained, "pretrained")?;
            let ckpt = Checkpoint::load(path)?;
            check_grid(&ckpt, &data.grid)?;
            let e = finetune_experiment(&cfg, &data, &ckpt, cfg.epochs, &mut log_epoch)?;
            e.save(&c.out, &data, cfg.seed, Some(path.display().to_string()))?;
            report_summary(&e);
        }
        Command::Evaluate(c) => {
            let cfg = load_config(&c)?;
            let data = dataset(&cfg)?;
            let ckpt = checkpoint(&cfg, &cfg.checkpoint, "checkpoint")?;
            check_grid(&ckpt, &data.grid)?;
            let model = model_from_checkpoint(&cfg, &ckpt)?;
            let split = split_combos(&data.combos(), cfg.split_fraction, cfg.seed)?;
            let windows = data.windows(&data.tracks_of(&split.test), cfg.window, cfg.stride);
            let report = evaluate_windows(&model, &data, &windows, cfg.window, cfg.batch_size)?;
            report.write(&c.out)?;
            let a = &report.windows.aggregates;
            eprintln!(
                "{} windows: mean IoU {:.4}, r2 area {:?}, depth {:?}, width {:?}",
                a.n, a.mean_iou, a.pearson_r2_area, a.pearson_r2_depth, a.pearson_r2_width
            );
        }
        Command::SweepSeqlen(c) => {
            let cfg = load_config(&c)?;
            let data = dataset(&cfg)?;
            let rows = sequence_length_sweep(&cfg, &data, &mut |s| eprintln!("{s}"))?;
            create_out(&c.out)?;
            write_sweep(&c.out, &rows)?;
        }
        Command::SweepFraction(c) => {
            let cfg = load_config(&c)?;
            let data = dataset(&cfg)?;
            let ckpt = checkpoint(&cfg, &cfg.pretrained, "pretrained")?;
            check_grid(&ckpt, &data.grid)?;
            let rows = fraction_sweep(&cfg, &data, &ckpt, &mut |s| eprintln!("{s}"))?;
            create_out(&c.out)?;
            write_sweep(&c.out, &rows)?;
        }
        Command::HatchAnalyze(c) => {
            let cfg = load_config(&c)?;
            let ckpt = checkpoint(&cfg, &cfg.checkpoint, "checkpoint")?;
            let hm = HatchManifest::load(cfg.require(&cfg.hatch_manifest, "hatch_manifest")?)?;
            check_grid(&ckpt, &hm.sdf_grid)?;
            let model = model_from_checkpoint(&cfg, &ckpt)?;
            let report = hatch_analyze(&model, &hm, cfg.window, cfg.half_window, cfg.batch_size)?;
            report.write(&c.out)?;
            eprintln!(
                "{} pairs, {} at risk of lack of fusion; distance MAE {:?} um, overlap accuracy {:?}",
                report.pairs.len(),
                report.lack_of_fusion_pairs,
                report.distance_mae_um,
                report.classification_accuracy
            );
        }
        Command::ExportEmbeddings(c) => {
            let cfg = load_config(&c)?;
            let data = dataset(&cfg)?;
            let ckpt = checkpoint(&cfg, &cfg.checkpoint, "checkpoint")?;
            check_grid(&ckpt, &data.grid)?;
            let model = model_from_checkpoint(&cfg, &ckpt)?;
            let split = split_combos(&data.combos(), cfg.split_fraction, cfg.seed)?;
            create_out(&c.out)?;
            let path = c.out.join("embeddings.csv");
            let n = export_embeddings(&model, &data, Some(&split), cfg.window, cfg.stride, cfg.batch_size, &path)?;
            eprintln!("wrote {n} rows to {}", path.display());
        }
        Command::Predict { common: c, track } => {
            let cfg = load_config(&c)?;
            let ckpt = checkpoint(&cfg, &cfg.checkpoint, "checkpoint")?;
            let (grid, truncation) = match (ckpt.meta.grid, ckpt.meta.truncation_um) {
                (Some(g), Some(t)) => (g, t),
                _ => {
                    let m = DatasetManifest::load(cfg.require(&cfg.manifest, "manifest")?)?;
                    (m.sdf_grid, m.truncation_um)
                }
            };
            let model = model_from_checkpoint(&cfg, &ckpt)?;
            let t = TrackManifest::load(&track)?;
            let base = track.parent().unwrap_or(Path::new("."));
            let p = predict_track(&model, &t, base, grid, truncation, cfg.window, cfg.half_window, cfg.batch_size, &c.out)?;
            eprintln!("{}: {} windows, mean prediction {:?}", p.track_id, p.windows.len(), p.mean);
        }
    }
    Ok(())
}

fn report_summary(e: &meltpool::pipeline::Experiment) {
    if let Some(r) = &e.report {
        let a = &r.windows.aggregates;
        eprintln!(
            "test side: {} windows, mean IoU {:.4}, r2 area {:?}, depth {:?}, width {:?}",
            a.n, a.mean_iou, a.pearson_r2_area, a.pearson_r2_depth, a.pearson_r2_width
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
