//! Command implementations behind the `morphon` binary.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use crate::data::{
    self, load_grayscale, load_pair, read_manifest, resize_bilinear, save_pgm, write_manifest, write_pgm, Gray8,
    ImagePair, RainConfig, SyntheticConfig,
};
use crate::loss::LossConfig;
use crate::metrics::{metrics_csv, MetricRow};
use crate::morph::export_se_image;
use crate::network::{self, Network, NetworkSpec};
use crate::optim::AdamConfig;
use crate::tensor::Tensor;
use crate::train::{fit, metric_rows, EpochLog, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "morphon", version, about = "Trainable morphological networks for image de-raining")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network on a rainy/clean manifest.
    Train(TrainArgs),
    /// De-rain a single image.
    Infer(InferArgs),
    /// Score a checkpoint on a manifest and write a metrics CSV.
    Eval(EvalArgs),
    /// Generate a synthetic rainy/clean dataset.
    Synth(SynthArgs),
    /// Print parameter counts or export learned structuring elements.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Morphon,
    MorphonSmall,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training manifest (`rainy<TAB>clean` per line).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Validation manifest. Without it the training manifest is split 80/10/10.
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV log (defaults to the checkpoint path with a `.csv` extension).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "morphon-small")]
    pub arch: Arch,
    /// Structuring element size (square).
    #[arg(long, default_value_t = 8)]
    pub se_size: usize,
    /// Conv kernel size (square) of the weight-map branches.
    #[arg(long, default_value_t = 8)]
    pub conv_size: usize,
    /// Elements per morphological layer (full architecture only).
    #[arg(long, default_value_t = 4)]
    pub channels: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Resize every image to N x N (bilinear) before training.
    #[arg(long)]
    pub resize: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Write every layer's output, both weight maps and the result as indexed PGMs.
    #[arg(long)]
    pub dump_intermediates: Option<PathBuf>,
    #[arg(long)]
    pub resize: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub resize: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rain on the left half only.
    #[arg(long)]
    pub half: bool,
    #[arg(long, default_value_t = 30)]
    pub streaks: usize,
    #[arg(long, default_value_t = 12.0)]
    pub length: f64,
    #[arg(long, default_value_t = 1.0)]
    pub width: f64,
    /// Mean streak angle, degrees from vertical.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub angle: f64,
    /// Per-image angle drawn uniformly from `angle +- spread`.
    #[arg(long, default_value_t = 0.0)]
    pub angle_spread: f64,
    #[arg(long, default_value_t = 0.4)]
    pub intensity: f64,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Print the total parameter count only.
    #[arg(long)]
    pub count: bool,
    /// Write each structuring element as a normalized PGM into DIR.
    #[arg(long)]
    pub export_se: Option<PathBuf>,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a, out),
        Command::Infer(a) => cmd_infer(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Inspect(a) => cmd_inspect(&a, out),
    }
}

fn square(n: Option<usize>) -> Option<(usize, usize)> {
    n.map(|n| (n, n))
}

fn load_entries(entries: &[(PathBuf, PathBuf)], resize: Option<usize>) -> Result<Vec<ImagePair>> {
    entries
        .iter()
        .map(|(r, c)| load_pair(r, c, square(resize)).map_err(Into::into))
        .collect()
}

pub fn arch_spec(arch: Arch, se_size: usize, conv_size: usize, channels: usize) -> NetworkSpec {
    match arch {
        Arch::Morphon => NetworkSpec::morphon(channels, se_size, conv_size),
        Arch::MorphonSmall => NetworkSpec::morphon_small(se_size, conv_size),
    }
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let loss = LossConfig {
        patch_size: a.patch_size,
        lambda: a.lambda,
        ..LossConfig::default()
    };
    loss.validate()?;
    if a.batch_size == 0 {
        bail!("--batch-size must be at least 1");
    }
    let entries = read_manifest(&a.manifest)?;
    if entries.is_empty() {
        bail!("{}: manifest is empty", a.manifest.display());
    }
    let (train_entries, val_entries) = match &a.val_manifest {
        Some(v) => (entries, read_manifest(v)?),
        None => {
            let keys: Vec<String> = entries.iter().map(|(_, c)| c.to_string_lossy().into_owned()).collect();
            let split = data::split_dataset(&keys, a.seed);
            let train: HashSet<&String> = split.train.iter().collect();
            let val: HashSet<&String> = split.val.iter().collect();
            let pick = |set: &HashSet<&String>| {
                entries
                    .iter()
                    .zip(&keys)
                    .filter(|(_, k)| set.contains(k))
                    .map(|(e, _)| e.clone())
                    .collect::<Vec<_>>()
            };
            (pick(&train), pick(&val))
        }
    };
    let train = load_entries(&train_entries, a.resize)?;
    let val = load_entries(&val_entries, a.resize)?;

    let mut net = Network::build(arch_spec(a.arch, a.se_size, a.conv_size, a.channels), a.seed)?;
    net.set_adam_config(AdamConfig {
        lr: a.lr,
        ..AdamConfig::default()
    })?;

    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    let mut log = String::from(EpochLog::CSV_HEADER);
    log.push('\n');
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        loss,
        seed: a.seed,
    };
    writeln!(
        out,
        "training {} parameters on {} pairs ({} validation)",
        net.count_parameters(),
        train.len(),
        val.len()
    )?;
    fit(&mut net, &train, &val, &cfg, |e| {
        log.push_str(&e.csv_row());
        log.push('\n');
        let _ = writeln!(out, "{}", e.csv_row());
    })?;
    network::save(&net, &a.out)?;
    fs::write(&log_path, log).with_context(|| format!("{}", log_path.display()))?;
    Ok(())
}

fn load_input(path: &Path, resize: Option<usize>) -> Result<Tensor> {
    let img = load_grayscale(path)?;
    Ok(match resize {
        Some(n) => resize_bilinear(&img, n, n)?,
        None => img,
    })
}

/// Writes the indexed layer dump; returns the number of files written.
pub fn dump_intermediates(net: &Network, input: &Tensor, dir: &Path) -> Result<usize> {
    fs::create_dir_all(dir).with_context(|| format!("{}", dir.display()))?;
    let pass = net.forward(input)?;
    let mut idx = 0;
    let mut write = |name: String, img: Gray8| -> Result<()> {
        write_pgm(dir.join(format!("{idx:02}_{name}.pgm")), &img)?;
        idx += 1;
        Ok(())
    };
    for (p, trace) in pass.paths.iter().enumerate() {
        for (l, (map, tapes)) in trace.morph_outputs.iter().zip(&trace.morph_tapes).enumerate() {
            let kind = tapes[0].kind.name();
            write(format!("path{}_layer{:02}_{kind}", p + 1, l + 1), Gray8::from_tensor_normalized(map))?;
        }
        for (c, map) in trace.conv_outputs().enumerate() {
            write(format!("path{}_conv{}", p + 1, c + 1), Gray8::from_tensor_normalized(map))?;
        }
    }
    for (p, trace) in pass.paths.iter().enumerate() {
        if let Some(w) = &trace.weight {
            write(format!("path{}_weight", p + 1), Gray8::from_tensor(w))?;
        }
    }
    write("output".into(), Gray8::from_tensor(&pass.output))?;
    Ok(idx)
}

pub fn cmd_infer(a: &InferArgs, out: &mut dyn Write) -> Result<()> {
    let net = network::load(&a.checkpoint)?;
    let input = load_input(&a.input, a.resize)?;
    let result = net.infer(&input)?;
    save_pgm(&a.output, &result)?;
    if let Some(dir) = &a.dump_intermediates {
        let n = dump_intermediates(&net, &input, dir)?;
        writeln!(out, "wrote {n} intermediate maps to {}", dir.display())?;
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let net = network::load(&a.checkpoint)?;
    let pairs = load_entries(&read_manifest(&a.manifest)?, a.resize)?;
    let rows: Vec<MetricRow> = metric_rows(&net, &pairs)?;
    let csv = metrics_csv(&rows);
    match &a.out {
        Some(p) => fs::write(p, csv).with_context(|| format!("{}", p.display()))?,
        None => out.write_all(csv.as_bytes())?,
    }
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = SyntheticConfig {
        count: a.n,
        size: a.size,
        seed: a.seed,
        rain: RainConfig {
            streak_count: a.streaks,
            streak_length: a.length,
            streak_width: a.width,
            angle: a.angle,
            intensity: a.intensity,
            seed: 0,
        },
        angle_spread: a.angle_spread,
        half: a.half,
    };
    let pairs = cfg.generate()?;
    fs::create_dir_all(&a.out).with_context(|| format!("{}", a.out.display()))?;
    let mut manifest = Vec::with_capacity(a.n);
    for (i, pair) in pairs.iter().enumerate() {
        let (rainy_name, clean_name) = (format!("rainy_{i:04}.pgm"), format!("clean_{i:04}.pgm"));
        save_pgm(a.out.join(&rainy_name), &pair.rainy)?;
        save_pgm(a.out.join(&clean_name), &pair.clean)?;
        manifest.push((rainy_name, clean_name));
    }
    let mpath = a.out.join("manifest.tsv");
    write_manifest(&mpath, &manifest)?;
    writeln!(out, "wrote {} pairs to {}", a.n, mpath.display())?;
    Ok(())
}

pub fn cmd_inspect(a: &InspectArgs, out: &mut dyn Write) -> Result<()> {
    let net = network::load(&a.checkpoint)?;
    if a.count {
        writeln!(out, "{}", net.count_parameters())?;
    }
    if let Some(dir) = &a.export_se {
        fs::create_dir_all(dir).with_context(|| format!("{}", dir.display()))?;
        for (p, path) in net.paths().iter().enumerate() {
            for (l, layer) in path.morph.iter().enumerate() {
                for (c, se) in layer.ses.iter().enumerate() {
                    let name = format!("path{}_layer{}_ch{}.pgm", p + 1, l + 1, c + 1);
                    write_pgm(dir.join(name), &export_se_image(se))?;
                }
            }
        }
    }
    if !a.count && a.export_se.is_none() {
        writeln!(out, "parameters: {}", net.count_parameters())?;
        writeln!(out, "paths: {}", net.paths().len())?;
        writeln!(out, "seed: {}", net.seed())?;
        writeln!(out, "optimizer steps: {}", net.optimizer.step_count)?;
        writeln!(out, "epochs: {}", net.meta.epochs)?;
        for (p, path) in net.paths().iter().enumerate() {
            let seq: Vec<String> = path
                .morph
                .iter()
                .map(|l| {
                    let se = &l.ses[0];
                    format!("{}{}{}x{}", l.ses.len(), l.kind.name()[..1].to_uppercase(), se.rows(), se.cols())
                })
                .chain(path.conv.iter().map(|c| {
                    let (kh, kw) = c.kernel_shape();
                    format!("{}@{}x{}-{:?}", c.out_channels(), kh, kw, c.activation).to_lowercase()
                }))
                .collect();
            writeln!(out, "path{}: {}", p + 1, seq.join(" "))?;
        }
    }
    Ok(())
}
