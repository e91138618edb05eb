//! Command-line interface. Every config key is also a `--flag`; precedence is
//! defaults < config file < environment < flags.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::error::{Error, Result};
use crate::harness::ablate::{ablate_components, ablate_margin, ablate_tokens, AblationRow, AblationTable, MARGIN_GRID, TOKEN_GRID};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::{TrainConfig, KEYS};
use crate::harness::evaluate::{predict_samples, score_predictions};
use crate::harness::gradcheck::gradient_suite;
use crate::harness::heatmap::{export_heatmap, export_panel};
use crate::harness::train::{format_log, train_with, LOG_HEADER};
use crate::metrics::{positive_counts, SWEEP_THRESHOLDS};
use crate::model::Model;
use crate::synthdata::{default_low_contrast, export_dataset, generate_dataset, load_manifest, Dataset};

/// Files written into the output directory.
pub const CONFIG_FILE: &str = "config.conf";
pub const LOG_FILE: &str = "train_log.tsv";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const METRICS_FILE: &str = "metrics.txt";
pub const SWEEP_FILE: &str = "sweep.tsv";
pub const COUNTS_FILE: &str = "sweep_counts.tsv";

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn checkpoint_arg() -> Arg {
    Arg::new("checkpoint")
        .long("checkpoint")
        .value_name("FILE")
        .required(true)
        .value_parser(clap::value_parser!(PathBuf))
        .help("checkpoint to load")
}

pub fn command() -> Command {
    let mut cmd = Command::new("medsad")
        .about("Vision-language anomaly detection and segmentation on synthetic lesion data")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .global(true)
                .value_parser(clap::value_parser!(PathBuf))
                .help("key = value config file"),
        )
        .arg(
            Arg::new("data")
                .long("data")
                .value_name("DIR")
                .global(true)
                .value_parser(clap::value_parser!(PathBuf))
                .help("load the dataset from DIR/manifest.txt instead of generating it"),
        )
        .arg(
            Arg::new("split")
                .long("split")
                .global(true)
                .value_parser(["easy", "hard"])
                .help("synthetic split; hard is the low-contrast, feathered variant [default: hard for ablate-components, easy otherwise]"),
        );
    for (key, help) in KEYS {
        cmd = cmd.arg(
            Arg::new(*key)
                .long(flag_name(key))
                .value_name("VALUE")
                .global(true)
                .help_heading("Config keys")
                .help(*help),
        );
    }
    cmd.subcommand(
        Command::new("generate-data")
            .about("Write the synthetic dataset as PGM images plus manifest.txt")
            .arg(
                Arg::new("out")
                    .long("out")
                    .value_name("DIR")
                    .value_parser(clap::value_parser!(PathBuf))
                    .help("destination [default: <out_dir>/data]"),
            ),
    )
    .subcommand(Command::new("train").about("Train, then write checkpoints, the epoch log and test metrics"))
    .subcommand(
        Command::new("evaluate")
            .about("Score a checkpoint on the test split")
            .arg(checkpoint_arg()),
    )
    .subcommand(Command::new("gradcheck").about("Compare analytic and finite-difference gradients"))
    .subcommand(Command::new("ablate-margin").about("Train one model per MC-loss margin"))
    .subcommand(Command::new("ablate-tokens").about("Train one model per learnable-token count"))
    .subcommand(Command::new("ablate-components").about("Baseline, +prompt, +TPCA, +MC-Loss"))
    .subcommand(
        Command::new("sweep-threshold")
            .about("Dice and predicted-positive counts across binarization thresholds")
            .arg(checkpoint_arg()),
    )
    .subcommand(
        Command::new("export-heatmap")
            .about("Write one test image's anomaly map as PGM")
            .arg(checkpoint_arg())
            .arg(
                Arg::new("index")
                    .long("index")
                    .default_value("0")
                    .value_parser(clap::value_parser!(usize))
                    .help("test-split position"),
            )
            .arg(
                Arg::new("out")
                    .long("out")
                    .value_name("FILE")
                    .value_parser(clap::value_parser!(PathBuf))
                    .help("heatmap path [default: <out_dir>/heatmap_<index>.pgm]"),
            )
            .arg(
                Arg::new("panel")
                    .long("panel")
                    .value_name("FILE")
                    .value_parser(clap::value_parser!(PathBuf))
                    .help("also write an image | mask | prediction PPM"),
            )
            .arg(
                Arg::new("quiet")
                    .long("quiet")
                    .action(ArgAction::SetTrue)
                    .help("do not print the written paths"),
            ),
    )
}

/// Layers the config file, environment and flags over `base`.
pub fn resolve_config(
    m: &ArgMatches,
    base: TrainConfig,
    env: impl Fn(&str) -> Option<String>,
) -> Result<TrainConfig> {
    let mut cfg = base;
    if let Some(path) = m.get_one::<PathBuf>("config") {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply_text(&text)?;
    }
    cfg.apply_env(env)?;
    for (key, _) in KEYS {
        if let Some(value) = m.get_one::<String>(key) {
            cfg.set(key, value).map_err(|e| e.at(key, 0))?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_dataset(m: &ArgMatches, cfg: &TrainConfig, hard_default: bool) -> Result<Dataset> {
    if let Some(dir) = m.get_one::<PathBuf>("data") {
        return load_manifest(dir, &cfg.model.category);
    }
    let hard = match m.get_one::<String>("split").map(String::as_str) {
        Some("hard") => true,
        Some(_) => false,
        None => hard_default,
    };
    let spec = if hard { default_low_contrast(&cfg.data)? } else { cfg.data.clone() };
    generate_dataset(&spec)
}

fn out_dir(cfg: &TrainConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    Ok(&cfg.out_dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Checkpoint plus the config resolved on top of its stored one.
fn load_checkpoint(m: &ArgMatches, env: impl Fn(&str) -> Option<String>) -> Result<(Checkpoint, TrainConfig)> {
    let path = m.get_one::<PathBuf>("checkpoint").expect("required");
    let ck = Checkpoint::load(path)?;
    let cfg = resolve_config(m, ck.config.clone(), env)?;
    Ok((ck, cfg))
}

fn print_ablation(table: &AblationTable, cfg: &TrainConfig, name: &str) -> Result<()> {
    let dir = out_dir(cfg)?;
    write(&dir.join(format!("ablate_{name}.tsv")), &table.to_tsv())?;
    print!("{}", table.to_tsv());
    Ok(())
}

fn progress(row: &AblationRow) {
    eprintln!(
        "{}: dice {:.2} accuracy {:.2} pauc {:.2}",
        row.label, row.dice_percent, row.accuracy_percent, row.pauc_percent
    );
}

/// Parses `args` (program name first) and runs the chosen subcommand.
pub fn run<I, T>(args: I, env: impl Fn(&str) -> Option<String> + Copy) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = command().get_matches_from(args);
    let (name, m) = matches.subcommand().expect("subcommand required");
    match name {
        "generate-data" => {
            let cfg = resolve_config(m, TrainConfig::default(), env)?;
            let dataset = load_dataset(m, &cfg, false)?;
            let dir = match m.get_one::<PathBuf>("out") {
                Some(dir) => dir.clone(),
                None => out_dir(&cfg)?.join("data"),
            };
            export_dataset(&dataset, &dir)?;
            println!(
                "wrote {} train and {} test samples to {} (digest {})",
                dataset.train.len(),
                dataset.test.len(),
                dir.display(),
                dataset.digest()
            );
        }
        "train" => {
            let cfg = resolve_config(m, TrainConfig::default(), env)?;
            let dataset = load_dataset(m, &cfg, false)?;
            let dir = out_dir(&cfg)?;
            write(&dir.join(CONFIG_FILE), &cfg.to_text())?;
            let start = Instant::now();
            println!("{LOG_HEADER}");
            let outcome = match train_with(&cfg, &dataset, |r| println!("{}", r.to_row())) {
                Err(Error::Diverged {
                    epoch,
                    step,
                    reason,
                    last_good,
                }) => {
                    last_good.save(&dir.join(LAST_CHECKPOINT))?;
                    return Err(Error::Diverged {
                        epoch,
                        step,
                        reason,
                        last_good,
                    });
                }
                other => other?,
            };
            write(&dir.join(LOG_FILE), &format_log(&outcome.log))?;
            outcome.last.save(&dir.join(LAST_CHECKPOINT))?;
            if let Some((_, _, best)) = &outcome.best {
                best.save(&dir.join(BEST_CHECKPOINT))?;
            }
            let predictions = predict_samples(&outcome.model, &dataset.test)?;
            let report = score_predictions(&dataset.test, &predictions)?;
            write(&dir.join(METRICS_FILE), &report.to_text())?;
            write(&dir.join(SWEEP_FILE), &report.sweep_tsv())?;
            print!("{}", report.to_text());
            println!("elapsed_seconds: {:.1}", start.elapsed().as_secs_f64());
        }
        "evaluate" => {
            let (ck, cfg) = load_checkpoint(m, env)?;
            let (model, _) = ck.restore()?;
            let dataset = load_dataset(m, &cfg, false)?;
            let report = score_predictions(&dataset.test, &predict_samples(&model, &dataset.test)?)?;
            let dir = out_dir(&cfg)?;
            write(&dir.join(METRICS_FILE), &report.to_text())?;
            write(&dir.join(SWEEP_FILE), &report.sweep_tsv())?;
            print!("{}", report.to_text());
        }
        "gradcheck" => {
            let cfg = resolve_config(m, TrainConfig::default(), env)?;
            let start = Instant::now();
            let entries = gradient_suite(cfg.seed)?;
            println!("check\tcoordinates\texcluded\tmax_rel_error\tstatus");
            for e in &entries {
                println!("{}", e.to_row());
            }
            println!("elapsed_seconds: {:.1}", start.elapsed().as_secs_f64());
            let failed: Vec<&str> = entries.iter().filter(|e| !e.passed()).map(|e| e.name.as_str()).collect();
            if !failed.is_empty() {
                return Err(Error::invalid("gradcheck", format!("failed: {}", failed.join(", "))));
            }
        }
        "ablate-margin" => {
            let cfg = resolve_config(m, TrainConfig::default(), env)?;
            let dataset = load_dataset(m, &cfg, false)?;
            let table = ablate_margin(&cfg, &dataset, &MARGIN_GRID, progress)?;
            print_ablation(&table, &cfg, "margin")?;
        }
        "ablate-tokens" => {
            let cfg = resolve_config(m, TrainConfig::default(), env)?;
            let dataset = load_dataset(m, &cfg, false)?;
            let table = ablate_tokens(&cfg, &dataset, &TOKEN_GRID, progress)?;
            print_ablation(&table, &cfg, "tokens")?;
        }
        "ablate-components" => {
            let cfg = resolve_config(m, TrainConfig::default(), env)?;
            let dataset = load_dataset(m, &cfg, true)?;
            let table = ablate_components(&cfg, &dataset, progress)?;
            print_ablation(&table, &cfg, "components")?;
        }
        "sweep-threshold" => {
            let (ck, cfg) = load_checkpoint(m, env)?;
            let (model, _) = ck.restore()?;
            let dataset = load_dataset(m, &cfg, false)?;
            let predictions = predict_samples(&model, &dataset.test)?;
            let report = score_predictions(&dataset.test, &predictions)?;
            let mut counts = String::from("id");
            for t in SWEEP_THRESHOLDS {
                counts.push_str(&format!("\tpositives@{t}"));
            }
            counts.push('\n');
            for (s, p) in dataset.test.iter().zip(&predictions) {
                counts.push_str(&s.id.to_string());
                for c in positive_counts(p.map.data(), &SWEEP_THRESHOLDS) {
                    counts.push_str(&format!("\t{c}"));
                }
                counts.push('\n');
            }
            let dir = out_dir(&cfg)?;
            write(&dir.join(SWEEP_FILE), &report.sweep_tsv())?;
            write(&dir.join(COUNTS_FILE), &counts)?;
            print!("{}", report.sweep_tsv());
            println!("headline_dice: {}", report.dice_percent);
        }
        "export-heatmap" => {
            let (ck, cfg) = load_checkpoint(m, env)?;
            let (model, _) = ck.restore()?;
            let dataset = load_dataset(m, &cfg, false)?;
            let index = *m.get_one::<usize>("index").expect("defaulted");
            let sample = dataset.test.get(index).ok_or_else(|| {
                Error::invalid("index", format!("{index} is past the {} test samples", dataset.test.len()))
            })?;
            let map = heatmap_for(&model, sample)?;
            let path = match m.get_one::<PathBuf>("out") {
                Some(p) => p.clone(),
                None => out_dir(&cfg)?.join(format!("heatmap_{index}.pgm")),
            };
            export_heatmap(&map, &path)?;
            let quiet = m.get_flag("quiet");
            if !quiet {
                println!("{}", path.display());
            }
            if let Some(panel) = m.get_one::<PathBuf>("panel") {
                export_panel(&sample.image, &sample.mask, &map, panel)?;
                if !quiet {
                    println!("{}", panel.display());
                }
            }
        }
        other => unreachable!("unknown subcommand {other}"),
    }
    Ok(())
}

fn heatmap_for(model: &Model, sample: &crate::synthdata::Sample) -> Result<crate::numerics::Tensor> {
    let mut predictions = predict_samples(model, std::slice::from_ref(sample))?;
    Ok(predictions.remove(0).map)
}
