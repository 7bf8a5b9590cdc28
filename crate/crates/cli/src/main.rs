//! `sstda`: generate synthetic corpora, train, evaluate and render timelines.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sstda::data::{load_dataset, read_labels, synthetic_corpus, ClassMap, SynthConfig};
use sstda::harness::{
    evaluate, load_checkpoint, render_ascii, render_svg, save_checkpoint, train_with, Mode, TrainConfig, Track,
};
use sstda::metrics::MetricOptions;
use sstda::Error;

#[derive(Parser, Debug)]
#[command(name = "sstda", version, about = "Temporal domain adaptation for action segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic source/target corpus.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// `key = value` generator settings; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        source_split: String,
        #[arg(long)]
        target_split: String,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        labeled_fraction: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Per-step losses as JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
        /// `key = value` training settings; command-line flags win.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: String,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Directory for per-video predicted label files.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Draw ground truth and predictions as an SVG timeline.
    Render {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        pred: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Class mapping; by default classes are numbered by first appearance.
        #[arg(long)]
        mapping: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) => 3,
        e if e.is_data_error() => 2,
        _ => 1,
    }
}

fn write_file(path: &Path, contents: &[u8]) -> sstda::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn generate(out: &Path, config: Option<&Path>, seed: u64) -> sstda::Result<()> {
    let cfg = match config {
        Some(p) => SynthConfig::read(p)?,
        None => SynthConfig::default(),
    };
    let corpus = synthetic_corpus(&cfg, seed)?;
    corpus.save(out)?;
    eprintln!("wrote {} videos to {}", corpus.videos().count(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    data: &Path,
    source_split: &str,
    target_split: &str,
    mode: Option<Mode>,
    labeled_fraction: Option<f64>,
    epochs: Option<usize>,
    seed: Option<u64>,
    out: &Path,
    log: Option<&Path>,
    config: Option<&Path>,
) -> sstda::Result<()> {
    let mut cfg = match config {
        Some(p) => TrainConfig::read(p)?,
        None => TrainConfig::default(),
    };
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if let Some(f) = labeled_fraction {
        cfg.labeled_fraction = f;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;

    let dataset = load_dataset(data)?;
    let source = dataset.split(source_split)?;
    let target = dataset.split(target_split)?;
    let mut log_file = match log {
        Some(p) => {
            write_file(p, b"")?;
            let f = std::fs::File::create(p).map_err(|e| io_error(p, e))?;
            Some((p, std::io::BufWriter::new(f)))
        }
        None => None,
    };
    let mut log_err = None;
    let mut last_epoch = usize::MAX;
    let (model, _) = train_with(&source, &target, dataset.num_classes(), &cfg, |entry| {
        if entry.epoch != last_epoch {
            last_epoch = entry.epoch;
            eprintln!("epoch {}/{}", entry.epoch + 1, cfg.epochs);
        }
        if let Some((p, w)) = log_file.as_mut() {
            let line = serde_json::to_string(entry).expect("plain struct");
            if let Err(e) = writeln!(w, "{line}") {
                log_err.get_or_insert_with(|| io_error(p, e));
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    if let Some((p, mut w)) = log_file {
        w.flush().map_err(|e| io_error(p, e))?;
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    save_checkpoint(out, &model)?;
    eprintln!("saved {}", out.display());
    Ok(())
}

fn eval_cmd(data: &Path, split: &str, model: &Path, report: &Path, predictions: Option<&Path>) -> sstda::Result<()> {
    let dataset = load_dataset(data)?;
    let model = load_checkpoint(model)?;
    let cfg = model.config();
    if cfg.input_dim != dataset.feature_dim() || cfg.stage.num_classes != dataset.num_classes() {
        return Err(Error::Dataset(format!(
            "model expects {} features and {} classes, dataset has {} and {}",
            cfg.input_dim,
            cfg.stage.num_classes,
            dataset.feature_dim(),
            dataset.num_classes()
        )));
    }
    let videos = dataset.split(split)?;
    let result = evaluate(&model, &videos, MetricOptions::default())?;
    let json = result.report.to_json();
    write_file(report, format!("{json}\n").as_bytes())?;
    if let Some(dir) = predictions {
        result.write_predictions(dir, dataset.mapping())?;
    }
    println!("{json}");
    Ok(())
}

/// Class names in order of first appearance across the given label files.
fn mapping_from_files(files: &[&Path]) -> sstda::Result<ClassMap> {
    let mut names: Vec<String> = Vec::new();
    for path in files {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        for name in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if !names.iter().any(|n| n == name) {
                names.push(name.to_string());
            }
        }
    }
    if names.is_empty() {
        return Err(Error::Malformed {
            path: files[0].to_path_buf(),
            detail: "no labels".into(),
        });
    }
    ClassMap::new(names)
}

fn render_cmd(gt: &Path, preds: &[PathBuf], out: &Path, mapping: Option<&Path>) -> sstda::Result<()> {
    let mut files = vec![gt];
    files.extend(preds.iter().map(PathBuf::as_path));
    let mapping = match mapping {
        Some(p) => ClassMap::read(p)?,
        None => mapping_from_files(&files)?,
    };
    let labels = files
        .iter()
        .map(|p| read_labels(p, &mapping))
        .collect::<sstda::Result<Vec<_>>>()?;
    if let Some((p, l)) = files.iter().zip(&labels).find(|(_, l)| l.len() != labels[0].len()) {
        return Err(Error::Shape(format!(
            "{} has {} frames, {} has {}",
            p.display(),
            l.len(),
            gt.display(),
            labels[0].len()
        )));
    }
    let names: Vec<String> = std::iter::once("ground truth".to_string())
        .chain(preds.iter().map(|p| {
            p.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string())
        }))
        .collect();
    let tracks: Vec<Track> = names
        .iter()
        .zip(&labels)
        .map(|(name, l)| Track { name, labels: l })
        .collect();
    let svg = render_svg(&tracks, Some(&mapping))?;
    write_file(out, svg.as_bytes())?;
    print!("{}", render_ascii(&tracks, 80)?);
    Ok(())
}

fn run(cli: Cli) -> sstda::Result<()> {
    match cli.command {
        Command::Generate { out, config, seed } => generate(&out, config.as_deref(), seed),
        Command::Train {
            data,
            source_split,
            target_split,
            mode,
            labeled_fraction,
            epochs,
            seed,
            out,
            log,
            config,
        } => train_cmd(
            &data,
            &source_split,
            &target_split,
            mode,
            labeled_fraction,
            epochs,
            seed,
            &out,
            log.as_deref(),
            config.as_deref(),
        ),
        Command::Eval {
            data,
            split,
            model,
            report,
            predictions,
        } => eval_cmd(&data, &split, &model, &report, predictions.as_deref()),
        Command::Render { gt, pred, out, mapping } => render_cmd(&gt, &pred, &out, mapping.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
