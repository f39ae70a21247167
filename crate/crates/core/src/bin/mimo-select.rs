use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mimo_select::config::Config;
use mimo_select::dataset::Dataset;
use mimo_select::model::Model;
use mimo_select::pipeline::{self, RankReport, TrainConfig};
use mimo_select::sim::{self, ConfigEcho, SimConfig, SimReport};
use mimo_select::{Error, Result};

/// Learned per-RE detector selection for 2x2 MIMO.
#[derive(Parser)]
#[command(name = "mimo-select", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config `seed`
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate blocks and write a labeled dataset
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank the seven features by mutual information
    Rank {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the first-stage selector
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attach reliability margins to a first-stage model
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Under-estimation threshold
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Relabel with a calibrated model and train the deployed selector
    Retrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a detector policy and write JSON and CSV reports
    Simulate {
        #[command(flatten)]
        common: Common,
        /// static:<1-5> | dynamic:<model> | genie
        #[arg(long)]
        policy: Option<String>,
        /// Shorthand for --policy dynamic:<model>
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge simulation reports into one CSV
    Report {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        cfg.set("seed", s.to_string())?;
    }
    Ok(cfg)
}

fn echo(cfg: &Config) -> ConfigEcho {
    ConfigEcho {
        entries: cfg.entries().clone(),
        source: cfg.source().to_string(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}.json"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common, out } => {
            let cfg = load_config(&common)?;
            let sim = SimConfig::from_config(&cfg)?;
            let (ds, stats) = sim::generate_dataset(&sim)?;
            ds.write(&out)?;
            eprintln!(
                "generated {} samples from {} REs ({} excluded where DR-ML erred); class counts {:?}",
                ds.len(),
                stats.total,
                stats.excluded,
                ds.class_counts()
            );
        }
        Command::Rank { common, dataset, out } => {
            let tc = TrainConfig::from_config(&load_config(&common)?)?;
            let ds = Dataset::read(&dataset)?;
            let processed = pipeline::process(&ds, &tc)?.all();
            let ranking = pipeline::rank(&processed, &tc)?;
            let report = RankReport::new(&ranking, processed.len(), tc.features);
            for r in &report.ranking {
                println!("{} I={:.6} score={:.6}", r.feature, r.relevance_bits, r.score);
            }
            println!("selected {}", report.selected.join(","));
            if let Some(out) = out {
                write_json(&out, &report)?;
            }
        }
        Command::Train { common, dataset, out } => {
            let tc = TrainConfig::from_config(&load_config(&common)?)?;
            let ds = Dataset::read(&dataset)?;
            let first = pipeline::train_first(&ds, &tc)?;
            first.model.save(&out)?;
            write_json(&sidecar(&out, "train"), &first.report)?;
            let t = &first.report.trace;
            eprintln!(
                "trained on {} samples: cost {:.6} after {} iterations ({:?}), train accuracy {:.4}",
                first.report.train_samples,
                t.final_cost(),
                t.iterations,
                t.stop,
                first.report.train_accuracy
            );
        }
        Command::Calibrate {
            common,
            dataset,
            model,
            out,
            gamma,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(g) = gamma {
                cfg.set("gamma", g.to_string())?;
            }
            let tc = TrainConfig::from_config(&cfg)?;
            let ds = Dataset::read(&dataset)?;
            let (calibrated, report) = pipeline::calibrate(&Model::load(&model)?, &ds, &tc)?;
            calibrated.save(&out)?;
            write_json(&sidecar(&out, "calibration"), &report)?;
            for m in &report.margins {
                println!(
                    "d={} delta={} underestimation={:.6} correct={:.6}",
                    m.d, m.delta, m.underestimation_rate, m.correct_rate
                );
            }
        }
        Command::Retrain {
            common,
            dataset,
            model,
            out,
        } => {
            let tc = TrainConfig::from_config(&load_config(&common)?)?;
            let ds = Dataset::read(&dataset)?;
            let (second, report) = pipeline::retrain(&Model::load(&model)?, &ds, &tc)?;
            second.save(&out)?;
            write_json(&sidecar(&out, "retrain"), &report)?;
            eprintln!(
                "retrained: {} labels raised, agreement with reliable selection {:.4}",
                report.relabeled, report.agreement
            );
        }
        Command::Simulate {
            common,
            policy,
            model,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            match (policy, model) {
                (Some(p), _) => cfg.set("policy", p)?,
                (None, Some(m)) => cfg.set("policy", format!("dynamic:{}", m.display()))?,
                (None, None) => {}
            }
            let sim = SimConfig::from_config(&cfg)?;
            let report = sim::simulate(&sim, echo(&cfg))?;
            let csv = report.write(&out)?;
            for p in &report.per_snr {
                println!(
                    "{} snr={} bler={} re_err={} avg_ed={} mults={} adds={}",
                    p.policy,
                    p.snr_db,
                    p.bler,
                    p.re_error_rate,
                    p.avg_ed_per_layer,
                    p.avg_multiplications_per_re,
                    p.avg_additions_per_re
                );
            }
            eprintln!("wrote {} and {}", out.display(), csv.display());
        }
        Command::Report { out, reports } => {
            let parsed = reports
                .iter()
                .map(|p| {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                        path: p.clone(),
                        source: e,
                    })?;
                    SimReport::from_json(&text)
                })
                .collect::<Result<Vec<_>>>()?;
            let csv = sim::merge_reports(&parsed);
            match out {
                Some(p) => std::fs::write(&p, csv).map_err(|e| Error::Io { path: p, source: e })?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: kind={} msg={msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
